//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs with the desk-scale protocol (5 starts × 50 iterations, quadrature
//! n = 100, 20 000 paths × 1 000 steps).

use std::process::ExitCode;
use std::time::Instant;

use dualbound::config::{Method, Overrides, RunConfig};
use dualbound::run::{self, MethodOutcome};
use dualbound::{report, CliError};
use dualbound_core::closed_form::{
    compute_g, crra_utility, hjb_residual, welfare_loss, BoundTable, FdSteps, HjbCoefficients, HjbKind,
};
use dualbound_core::drift_policy::{init_params_with_std, Activation, DriftPolicy, PolicyKind};
use dualbound_core::lower_bound::{ControlRule, SimulationConfig};
use dualbound_core::market::MarketScenario;
use dualbound_core::mortality::MortalityModel;
use dualbound_core::quadrature::UniformGrid;
use dualbound_core::sobol::Sobol;

// reference levels for the constant-coefficient market and the perturbed-drift market
const EX1_UPPER: f64 = -8.4850600;
const EX1_LOWER: f64 = -8.5064352;
const EX1_LEVEL_TOL: f64 = 0.01;
const MAX_REL_GAP: f64 = 0.005;
const PARITY_TOL: f64 = 0.005;
const SNAKE_MAX_GAP: f64 = 0.006;
const AFFINE_MIN_GAP: f64 = 0.012;
const EX2_SNAKE_UPPER: f64 = -8.3259363;
const EX2_SNAKE_LOWER: f64 = -8.3489955;
const LOSS_TOL_PP: f64 = 1e-4;
const HJB_TOL: f64 = 1e-4;
const HJB_POINTS: usize = 50;
const Z_BAND: f64 = 3.0;
const SURVIVAL_TOL: f64 = 1e-10;
const ADDITIVITY_TOL: f64 = 1e-14;
const FACE_TAIL_FRACTION: f64 = 0.05;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn desk(preset: &str, methods: &str) -> RunConfig {
    let o = Overrides {
        preset: Some(preset.into()),
        desk_scale: true,
        ..Overrides::default()
    };
    RunConfig::parse(&format!("policy.methods = {methods}"), &o).expect("valid desk config")
}

fn rel_gap(o: &MethodOutcome) -> f64 {
    let lower = o.candidate.as_ref().unwrap().estimate;
    (o.upper - lower).abs() / lower.abs()
}

fn lower(o: &MethodOutcome) -> f64 {
    o.candidate.as_ref().unwrap().estimate
}

fn c1(affine: &MethodOutcome, secs: f64) -> Outcome {
    let (u, l, g) = (affine.upper, lower(affine), rel_gap(affine));
    Outcome {
        id: 1,
        name: "example1 affine bound levels",
        pass: (u - EX1_UPPER).abs() <= EX1_LEVEL_TOL && (l - EX1_LOWER).abs() <= EX1_LEVEL_TOL && g <= MAX_REL_GAP,
        detail: format!(
            "upper {u:.7} (ref {EX1_UPPER} ± {EX1_LEVEL_TOL}), lower {l:.7} (ref {EX1_LOWER} ± {EX1_LEVEL_TOL}), rel gap {:.4}% (≤ 0.5%), {secs:.1} s",
            100.0 * g
        ),
    }
}

fn c2(affine: &MethodOutcome, relu: &MethodOutcome) -> Outcome {
    let d = (relu.upper - affine.upper).abs();
    let g = rel_gap(relu);
    Outcome {
        id: 2,
        name: "example1 relu network parity",
        pass: d <= PARITY_TOL && g <= MAX_REL_GAP,
        detail: format!(
            "upper {:.7} vs affine {:.7} (|Δ| {d:.2e} ≤ {PARITY_TOL}), rel gap {:.4}%",
            relu.upper,
            affine.upper,
            100.0 * g
        ),
    }
}

fn c3(ex2: &[MethodOutcome]) -> Outcome {
    let [a, r, s] = [rel_gap(&ex2[0]), rel_gap(&ex2[1]), rel_gap(&ex2[2])];
    Outcome {
        id: 3,
        name: "example2 relative-gap ordering",
        pass: s < r && r < a && s <= SNAKE_MAX_GAP && a >= AFFINE_MIN_GAP,
        detail: format!(
            "snake {:.4}% < relu {:.4}% < affine {:.4}%; snake ≤ 0.6%, affine ≥ 1.2%",
            100.0 * s,
            100.0 * r,
            100.0 * a
        ),
    }
}

fn c4() -> Outcome {
    let l1 = 100.0 * welfare_loss(EX1_UPPER, EX1_LOWER, 1.5).unwrap();
    let l2 = 100.0 * welfare_loss(EX2_SNAKE_UPPER, EX2_SNAKE_LOWER, 1.5).unwrap();
    Outcome {
        id: 4,
        name: "welfare-loss arithmetic",
        pass: (l1 - 0.5019).abs() <= LOSS_TOL_PP && (l2 - 0.5516).abs() <= LOSS_TOL_PP,
        detail: format!("{l1:.6}% (ref 0.5019%), {l2:.6}% (ref 0.5516%), tol {LOSS_TOL_PP} pp"),
    }
}

fn c5(s: &MarketScenario, policy: &DriftPolicy) -> Outcome {
    let clock = Instant::now();
    let c = run::constraint();
    let sobol = Sobol::new(3).unwrap();
    let mut u = [0.0; 3];
    let mut worst = [0.0f64; 3];
    let (nw, nr) = (3000, 4000);
    let value = |t: f64, w: f64, y: f64| {
        BoundTable::build_with_counts(s, &c, policy, t, nw, nr)
            .unwrap()
            .value_at_start(w, y)
            .unwrap()
            .value
    };
    let g_at = |t: f64| {
        BoundTable::build_with_counts(s, &c, policy, t, nw, nr)
            .unwrap()
            .start()
            .g
    };
    let bequest_g = |t: f64| {
        compute_g(s, &UniformGrid::new(t, s.horizon, nr).unwrap())
            .unwrap()
            .values()[0]
    };
    let bequest = |t: f64, w: f64, _y: f64| crra_utility(w, s.gamma()) * bequest_g(t).powf(s.gamma());
    let mut failures = 0;
    for i in 1..=HJB_POINTS as u32 {
        sobol.point(i, &mut u);
        let w = 20.0 * 100f64.powf(u[1]);
        let y = 10.0 + 90.0 * u[2];
        let cases = [
            (HjbKind::Bequest, 0.5 + 49.0 * u[0]),
            (HjbKind::Retirement, 20.5 + 29.0 * u[0]),
            (HjbKind::Working, 0.5 + 19.0 * u[0]),
        ];
        for (k, (kind, t)) in cases.into_iter().enumerate() {
            let r = match kind {
                HjbKind::Bequest => {
                    let coeffs = HjbCoefficients::at(kind, s, &c, policy, t, bequest_g(t)).unwrap();
                    hjb_residual(kind, s, &coeffs, bequest, t, w, 0.0, FdSteps::default())
                }
                _ => {
                    let coeffs = HjbCoefficients::at(kind, s, &c, policy, t, g_at(t)).unwrap();
                    let y = if kind == HjbKind::Working { y } else { 0.0 };
                    hjb_residual(kind, s, &coeffs, value, t, w, y, FdSteps::default())
                }
            };
            match r {
                Ok(r) => worst[k] = worst[k].max(r.abs()),
                Err(_) => failures += 1,
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    Outcome {
        id: 5,
        name: "HJB residual suite",
        pass: failures == 0 && worst.iter().all(|&w| w < HJB_TOL) && secs < 10.0,
        detail: format!(
            "max |residual| bequest {:.2e}, retirement {:.2e}, working {:.2e} over {HJB_POINTS} points each (< {HJB_TOL}), {secs:.1} s",
            worst[0], worst[1], worst[2]
        ),
    }
}

fn c6(affine: &MethodOutcome) -> Outcome {
    let b = &affine.budget;
    let worst = b.martingale.iter().map(|(_, z)| z.abs()).fold(0.0, f64::max);
    let secs = affine.times.verify.as_secs_f64();
    Outcome {
        id: 6,
        name: "budget-constraint identity",
        pass: b.z_score.abs() <= Z_BAND && secs < 60.0,
        detail: format!(
            "lhs {:.6} rhs {:.6} z {:+.3} at 2^14 paths; martingale drift max |z| {worst:.3}; {secs:.2} s",
            b.lhs, b.rhs, b.z_score
        ),
    }
}

fn c7() -> Result<Outcome, CliError> {
    let c = run::constraint();
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for i in 0..20u64 {
        let s = if i % 4 < 2 {
            MarketScenario::example1()
        } else {
            MarketScenario::example2()
        };
        let (kind, std) = match i % 2 {
            0 => (PolicyKind::Affine, 0.02),
            _ => (
                PolicyKind::Mlp(if i % 4 == 1 {
                    Activation::Relu
                } else {
                    Activation::snake()
                }),
                0.05,
            ),
        };
        let params = init_params_with_std(kind, 1000 + i, std).unwrap();
        let p = DriftPolicy::unflatten(kind, &params, s.retirement, s.horizon).unwrap();
        let upper = BoundTable::build(&s, &c, &p, 0.0, 100)
            .unwrap()
            .value_at_start(200.0, 50.0)
            .unwrap()
            .value;
        let lb = run::simulate(&run::plan(&s, &p, SimulationConfig::default(), ControlRule::Feedback)?)?;
        let slack = (lb.estimate - upper) / lb.std_error;
        worst = worst.max(slack);
        if slack > 3.0 {
            violations += 1;
        }
    }
    Ok(Outcome {
        id: 7,
        name: "weak duality for random policies",
        pass: violations == 0,
        detail: format!("20 policies, {violations} with lower > upper + 3 s.e.; max (lower − upper)/s.e. {worst:.2}"),
    })
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn c8() -> Outcome {
    let m = MortalityModel::new(45.0, 86.3, 9.5).unwrap();
    let integral = simpson(&|t| m.hazard(t).unwrap(), 0.0, 50.0, 1e-14);
    let oracle = (-integral).exp();
    let survival = m.survival(50.0).unwrap();
    let err = (survival - oracle).abs();
    let mut additivity = 0.0f64;
    for (a, b, c) in [(0.0, 12.5, 50.0), (3.0, 20.0, 41.7), (19.9, 20.0, 20.1)] {
        let lhs = m.cumulative_hazard(a, b).unwrap() + m.cumulative_hazard(b, c).unwrap();
        additivity = additivity.max((lhs - m.cumulative_hazard(a, c).unwrap()).abs());
    }
    Outcome {
        id: 8,
        name: "mortality oracle",
        pass: err <= SURVIVAL_TOL && additivity <= ADDITIVITY_TOL,
        detail: format!(
            "survival(50) {survival:.12} vs quadrature {oracle:.12} (|Δ| {err:.1e}); additivity |Δ| {additivity:.1e}"
        ),
    }
}

fn c9(affine: &MethodOutcome) -> Outcome {
    let tr = &affine.candidate.as_ref().unwrap().trajectory;
    let f0 = tr.face_value[0];
    let crossing =
        tr.t.windows(2)
            .zip(tr.face_value.windows(2))
            .find(|(_, f)| f[0] > 0.0 && f[1] <= 0.0)
            .map(|(t, _)| t[1]);
    let k = tr.t.iter().position(|&t| (t - 49.5).abs() < 1e-9).unwrap();
    let tail = tr.face_value[k].abs();
    let crossing_ok = crossing.is_some_and(|t| t > 10.0 && t < 20.0);
    Outcome {
        id: 9,
        name: "face-value spoon shape",
        pass: f0 > 0.0 && crossing_ok && tail < FACE_TAIL_FRACTION * f0.abs(),
        detail: format!(
            "E[M−W](0) = {f0:.3}, first nonpositive at t = {}, |E[M−W](49.5)| = {tail:.2e} (< {:.3})",
            crossing.map_or("never".into(), |t| format!("{t:.3}")),
            FACE_TAIL_FRACTION * f0.abs()
        ),
    }
}

fn c10(cfg: &RunConfig, first: &run::RunOutput) -> Result<Outcome, CliError> {
    let second = run::run(cfg)?;
    let dir = std::env::temp_dir().join(format!("dualbound-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    report::write_bounds(&a, &report::reports(first))?;
    report::write_bounds(&b, &report::reports(&second))?;
    let same = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Outcome {
        id: 10,
        name: "determinism",
        pass: same,
        detail: format!(
            "bounds.csv from two runs with seed {} {}",
            cfg.seed,
            if same { "identical" } else { "differ" }
        ),
    })
}

fn main() -> ExitCode {
    let run_all = || -> Result<Vec<Outcome>, CliError> {
        let ex1 = desk("example1", "affine,relu");
        let clock = Instant::now();
        let out1 = run::run(&RunConfig {
            methods: vec![ex1.methods[0]],
            ..ex1.clone()
        })?;
        let secs = clock.elapsed().as_secs_f64();
        let relu = run::run(&RunConfig {
            methods: vec![ex1.methods[1]],
            ..ex1.clone()
        })?;
        let affine = &out1.outcomes[0];
        let ex2 = run::run(&desk("example2", "affine,relu,snake"))?;

        let mut results = vec![
            c1(affine, secs),
            c2(affine, &relu.outcomes[0]),
            c3(&ex2.outcomes),
            c4(),
            c5(&ex2.config.scenario, &ex2.outcomes[2].policy),
            c6(affine),
            c7()?,
            c8(),
            c9(affine),
        ];
        let single = RunConfig {
            methods: vec![Method::parse("affine", 10.0).unwrap()],
            ..ex1
        };
        results.push(c10(&single, &out1)?);
        Ok(results)
    };
    match run_all() {
        Ok(results) => {
            for r in &results {
                println!(
                    "[{}] {:>2} {}: {}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.id,
                    r.name,
                    r.detail
                );
            }
            let passed = results.iter().filter(|r| r.pass).count();
            println!("{passed}/{} acceptance criteria passed", results.len());
            if passed == results.len() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            println!("[FAIL] acceptance run aborted: {e}");
            ExitCode::FAILURE
        }
    }
}
