//! Multi-start minimization of the upper bound over flat policy parameters.
//!
//! Each start is independent; [`run_start`] can be called concurrently and
//! [`reduce_starts`] picks the winner with ties going to the lowest index.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::closed_form::BoundTable;
use crate::constraints::ConstraintSpec;
use crate::drift_policy::{init_params_with_std, DriftPolicy, PolicyKind};
use crate::error::{invalid, Error, Result};
use crate::market::MarketScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    NelderMead,
    QuasiNewtonFd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub num_starts: usize,
    pub iterations_per_start: usize,
    pub algorithm: Algorithm,
    /// Relative central-difference step: `h_i = fd_step · max(|x_i|, 1)`.
    pub fd_step: f64,
    /// Stop when the objective changes by less than `objective_tol · max(1, |f|)`.
    pub objective_tol: f64,
    /// ... and the parameter step is shorter than this.
    pub param_tol: f64,
    pub seed: u64,
    /// Standard deviation of the initial parameters; `None` uses the family default.
    pub init_std: Option<f64>,
}

pub const MAX_INIT_RETRIES: u64 = 3;

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            num_starts: 30,
            iterations_per_start: 50,
            algorithm: Algorithm::QuasiNewtonFd,
            fd_step: 1e-6,
            objective_tol: 1e-13,
            param_tol: 1e-10,
            seed: 0,
            init_std: None,
        }
    }
}

impl OptimizerConfig {
    /// 5 starts × 50 iterations.
    pub fn desk_scale() -> Self {
        Self {
            num_starts: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_starts == 0 {
            return Err(invalid("opt.num_starts", "must be positive"));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(invalid("opt.fd_step", "must be positive"));
        }
        if !(self.objective_tol > 0.0 && self.param_tol > 0.0) {
            return Err(invalid("opt.tolerance", "must be positive"));
        }
        if let Some(s) = self.init_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid("opt.init_std", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Seed of the `attempt`-th initialization of start `start`.
    pub fn start_seed(&self, start: usize, attempt: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add((start as u64) << 4 | attempt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    /// Coordinates where a perturbed objective was non-finite and a one-sided
    /// difference was used.
    pub one_sided: Vec<usize>,
}

/// Central differences with `h_i = fd_step · max(|x_i|, 1)`.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], fd_step: f64) -> Result<Gradient> {
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::NonFinite(alloc::format!("objective {f0} at the base point")));
    }
    let mut p = x.to_vec();
    let mut values = vec![0.0; x.len()];
    let mut one_sided = Vec::new();
    for i in 0..x.len() {
        let h = fd_step * x[i].abs().max(1.0);
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let down = f(&p);
        p[i] = x[i];
        values[i] = match (up.is_finite(), down.is_finite()) {
            (true, true) => (up - down) / (2.0 * h),
            (true, false) => {
                one_sided.push(i);
                (up - f0) / h
            }
            (false, true) => {
                one_sided.push(i);
                (f0 - down) / h
            }
            (false, false) => {
                return Err(Error::NonFinite(alloc::format!(
                    "objective on both sides of coordinate {i}"
                )));
            }
        };
    }
    Ok(Gradient { values, one_sided })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartResult {
    pub start: usize,
    pub seed: u64,
    pub initial_objective: f64,
    pub params: Vec<f64>,
    pub objective: f64,
    /// Incumbent objective after each iteration; entry 0 is the initialization.
    pub incumbents: Vec<f64>,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Safe objective wrapper: errors and non-finite values become `+∞`, and
/// evaluations are counted.
struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// One start: initialize (retrying on a non-finite objective) and iterate.
pub fn run_start<F: FnMut(&[f64]) -> f64>(
    objective: F,
    kind: PolicyKind,
    config: &OptimizerConfig,
    start: usize,
) -> Result<StartResult> {
    let std = config.init_std.unwrap_or(kind.default_init_std());
    let mut f = Counted {
        f: objective,
        evaluations: 0,
    };
    let mut attempt = 0;
    let (seed, x0, f0) = loop {
        let seed = config.start_seed(start, attempt);
        let x0 = init_params_with_std(kind, seed, std)?;
        let f0 = f.eval(&x0);
        if f0.is_finite() {
            break (seed, x0, f0);
        }
        if attempt == MAX_INIT_RETRIES {
            return Err(Error::NonFinite(alloc::format!(
                "start {start}: objective non-finite after {MAX_INIT_RETRIES} reseeds"
            )));
        }
        attempt += 1;
    };
    let (params, objective, incumbents) = match config.algorithm {
        Algorithm::QuasiNewtonFd => bfgs(&mut f, x0, f0, config),
        Algorithm::NelderMead => nelder_mead(&mut f, x0, f0, config),
    };
    Ok(StartResult {
        start,
        seed,
        initial_objective: f0,
        params,
        objective,
        incumbents,
        evaluations: f.evaluations,
    })
}

fn bfgs<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    mut x: Vec<f64>,
    mut fx: f64,
    config: &OptimizerConfig,
) -> (Vec<f64>, f64, Vec<f64>) {
    let n = x.len();
    let mut trace = vec![fx];
    let identity = |scale: f64| {
        let mut h = vec![0.0; n * n];
        (0..n).for_each(|i| h[i * n + i] = scale);
        h
    };
    let grad = |f: &mut Counted<F>, x: &[f64]| -> Option<Vec<f64>> {
        numerical_gradient(|p| f.eval(p), x, config.fd_step)
            .ok()
            .map(|g| g.values)
    };
    let Some(mut g) = grad(f, &x) else {
        return (x, fx, trace);
    };
    let mut h = identity(1.0);
    let mut fresh = true;
    let mut iter = 0;
    while iter < config.iterations_per_start {
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            h = identity(1.0);
        }
        if slope == 0.0 {
            break;
        }
        // Armijo backtracking
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let ft = f.eval(&trial);
            if ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                break;
            }
            h = identity(1.0);
            fresh = true;
            continue;
        };
        iter += 1;
        let Some(g_new) = grad(f, &x_new) else {
            x = x_new;
            fx = f_new;
            trace.push(fx);
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let converged = (fx - f_new).abs() < config.objective_tol * fx.abs().max(1.0) && norm(&s) < config.param_tol;
        let sy = dot(&s, &y);
        if sy > 1e-14 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh {
                h = identity(sy / dot(&y, &y));
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
            fresh = false;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        if converged {
            break;
        }
    }
    (x, fx, trace)
}

fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    x0: Vec<f64>,
    f0: f64,
    config: &OptimizerConfig,
) -> (Vec<f64>, f64, Vec<f64>) {
    let n = x0.len();
    let mut trace = vec![f0];
    let mut simplex = vec![(x0.clone(), f0)];
    for i in 0..n {
        let mut p = x0.clone();
        p[i] += 0.05 * p[i].abs().max(0.01);
        let fp = f.eval(&p);
        simplex.push((p, fp));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let toward = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    for _ in 0..config.iterations_per_start {
        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            centroid.iter_mut().zip(p).for_each(|(c, v)| *c += v / n as f64);
        }
        let (worst, f_worst) = simplex[n].clone();
        let reflected = toward(&centroid, &worst, -1.0);
        let fr = f.eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = toward(&centroid, &worst, -2.0);
            let fe = f.eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (target, ft) = if fr < f_worst {
                (&reflected, fr)
            } else {
                (&worst, f_worst)
            };
            let contracted = toward(&centroid, target, 0.5);
            let fc = f.eval(&contracted);
            if fc <= ft {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let p = toward(&best, &vertex.0, 0.5);
                    let fp = f.eval(&p);
                    *vertex = (p, fp);
                }
            }
        }
        order(&mut simplex);
        trace.push(simplex[0].1);
        let spread = simplex[n].1 - simplex[0].1;
        let best = &simplex[0].0;
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(best).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if spread < config.objective_tol * simplex[0].1.abs().max(1.0) && size < config.param_tol {
            break;
        }
    }
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub start: usize,
    pub iteration: usize,
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
    pub best_params: Vec<f64>,
    pub best_objective: f64,
    pub best_start: usize,
    pub finals: Vec<f64>,
    /// Initialization seed actually used by each start.
    pub seeds: Vec<u64>,
}

/// Picks the lowest final objective; ties go to the lowest start index.
pub fn reduce_starts(mut results: Vec<StartResult>) -> Result<OptimizationTrace> {
    results.sort_by_key(|r| r.start);
    let best = results
        .iter()
        .filter(|r| r.objective.is_finite())
        .fold(None::<&StartResult>, |best, r| match best {
            Some(b) if b.objective <= r.objective => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::NonFinite("no start produced a finite objective".into()))?;
    let rows = results
        .iter()
        .flat_map(|r| {
            r.incumbents
                .iter()
                .enumerate()
                .map(move |(iteration, &incumbent)| TraceRow {
                    start: r.start,
                    iteration,
                    incumbent,
                })
        })
        .collect();
    Ok(OptimizationTrace {
        rows,
        best_params: best.params.clone(),
        best_objective: best.objective,
        best_start: best.start,
        finals: results.iter().map(|r| r.objective).collect(),
        seeds: results.iter().map(|r| r.seed).collect(),
    })
}

/// `J̃(0, W0, Y0)` of the policy with parameters `params`, or `+∞` if it cannot be evaluated.
pub fn upper_bound_objective<'a>(
    scenario: &'a MarketScenario,
    constraint: &'a ConstraintSpec,
    kind: PolicyKind,
    n_intervals: usize,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |params| {
        DriftPolicy::unflatten(kind, params, scenario.retirement, scenario.horizon)
            .and_then(|p| BoundTable::build(scenario, constraint, &p, 0.0, n_intervals))
            .and_then(|t| t.value_at_start(scenario.initial_wealth, scenario.income.initial))
            .map_or(f64::INFINITY, |v| v.value)
    }
}

/// Runs every start sequentially and returns the best policy with its trace.
pub fn minimize_upper_bound(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    kind: PolicyKind,
    config: &OptimizerConfig,
    n_intervals: usize,
) -> Result<(DriftPolicy, OptimizationTrace)> {
    config.validate()?;
    scenario.check()?;
    let objective = upper_bound_objective(scenario, constraint, kind, n_intervals);
    let results = (0..config.num_starts)
        .map(|i| run_start(&objective, kind, config, i))
        .collect::<Result<Vec<_>>>()?;
    let trace = reduce_starts(results)?;
    let policy = DriftPolicy::unflatten(kind, &trace.best_params, scenario.retirement, scenario.horizon)?;
    Ok((policy, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift_policy::Activation;
    use crate::market::Curve;
    use core::cell::RefCell;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn mix() -> ConstraintSpec {
        ConstraintSpec::no_borrowing_no_shorting()
    }

    #[test]
    fn gradient_of_quadratic() {
        let g = numerical_gradient(|p| p.iter().map(|x| x * x).sum(), &[1.0, -2.0], 1e-6).unwrap();
        assert!(
            (g.values[0] - 2.0).abs() < 1e-8 && (g.values[1] + 4.0).abs() < 1e-8,
            "{g:?}"
        );
        assert!(g.one_sided.is_empty());
        let g = numerical_gradient(|p| p[0].sin(), &[0.3, 5.0], 1e-6).unwrap();
        assert!(g.values[1].abs() < 1e-12);
    }

    #[test]
    fn gradient_falls_back_to_one_side() {
        let f = |p: &[f64]| if p[0] < 0.0 { f64::NAN } else { p[0] * p[0] + p[1] };
        let g = numerical_gradient(f, &[0.0, 1.0], 1e-6).unwrap();
        assert_eq!(g.one_sided, [0]);
        assert!(g.values[0].abs() < 1e-5);
        assert!(numerical_gradient(|_| f64::INFINITY, &[0.0], 1e-6).is_err());
    }

    #[test]
    fn gradient_matches_directional_difference_on_the_bound() {
        let s = MarketScenario::example2();
        let kind = PolicyKind::Mlp(Activation::snake());
        let c = mix();
        let f = upper_bound_objective(&s, &c, kind, 100);
        let x = init_params_with_std(kind, 11, 0.05).unwrap();
        let g = numerical_gradient(&f, &x, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d: Vec<f64> = d.iter().map(|v| v / norm(&d)).collect();
        let h = 1e-5;
        let shifted = |t: f64| x.iter().zip(&d).map(|(a, b)| a + t * b).collect::<Vec<_>>();
        let direct = (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h);
        let from_grad = dot(&g.values, &d);
        assert!(
            (direct - from_grad).abs() <= 1e-4 * direct.abs().max(1e-3),
            "{direct} {from_grad}"
        );
    }

    fn rosenbrock(p: &[f64]) -> f64 {
        (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2)
    }

    fn run_plain(algorithm: Algorithm, iterations: usize) -> (Vec<f64>, f64, Vec<f64>) {
        let config = OptimizerConfig {
            algorithm,
            iterations_per_start: iterations,
            ..OptimizerConfig::default()
        };
        let mut f = Counted {
            f: rosenbrock,
            evaluations: 0,
        };
        let x0 = vec![-1.2, 1.0];
        let f0 = rosenbrock(&x0);
        match algorithm {
            Algorithm::QuasiNewtonFd => bfgs(&mut f, x0, f0, &config),
            Algorithm::NelderMead => nelder_mead(&mut f, x0, f0, &config),
        }
    }

    #[test]
    fn both_algorithms_solve_rosenbrock() {
        let (x, fx, trace) = run_plain(Algorithm::QuasiNewtonFd, 200);
        assert!(fx < 1e-10 && (x[0] - 1.0).abs() < 1e-4, "{x:?} {fx}");
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        let (x, fx, trace) = run_plain(Algorithm::NelderMead, 2000);
        assert!(fx < 1e-8 && (x[1] - 1.0).abs() < 1e-3, "{x:?} {fx}");
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    fn slack_scenario() -> MarketScenario {
        let mut s = MarketScenario::example1();
        s.income.initial = 0.0;
        s.drift = Curve::Constant(0.04);
        s
    }

    #[test]
    fn slack_constraint_drives_toward_zero_adjustment() {
        let s = slack_scenario();
        let zero = upper_bound_objective(&s, &mix(), PolicyKind::Affine, 100)(&[0.0; 8]);
        let config = OptimizerConfig {
            num_starts: 3,
            ..OptimizerConfig::default()
        };
        for algorithm in [Algorithm::QuasiNewtonFd, Algorithm::NelderMead] {
            let config = OptimizerConfig { algorithm, ..config };
            let (_, trace) = minimize_upper_bound(&s, &mix(), PolicyKind::Affine, &config, 100).unwrap();
            assert!(
                (trace.best_objective - zero).abs() < 1e-3,
                "{algorithm:?}: {} vs {zero}",
                trace.best_objective
            );
            assert!(trace.best_objective >= zero - 1e-9);
        }
    }

    #[test]
    fn bookkeeping_and_reproducibility() {
        let s = MarketScenario::example1();
        let config = OptimizerConfig {
            num_starts: 3,
            iterations_per_start: 5,
            seed: 9,
            ..OptimizerConfig::default()
        };
        let (p1, t1) = minimize_upper_bound(&s, &mix(), PolicyKind::Affine, &config, 100).unwrap();
        let (p2, t2) = minimize_upper_bound(&s, &mix(), PolicyKind::Affine, &config, 100).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
        let min = t1.finals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(t1.best_objective, min);
        assert_eq!(t1.finals[t1.best_start], min);
        for start in 0..3 {
            let inc: Vec<f64> = t1
                .rows
                .iter()
                .filter(|r| r.start == start)
                .map(|r| r.incumbent)
                .collect();
            assert!(inc.windows(2).all(|w| w[1] <= w[0]));
            assert!(t1.best_objective <= inc[0]);
        }
    }

    #[test]
    fn zero_iterations_return_best_initialization() {
        let s = MarketScenario::example1();
        let config = OptimizerConfig {
            num_starts: 4,
            iterations_per_start: 0,
            ..OptimizerConfig::default()
        };
        let c = mix();
        let f = upper_bound_objective(&s, &c, PolicyKind::Affine, 100);
        let inits: Vec<f64> = (0..4)
            .map(|i| f(&init_params_with_std(PolicyKind::Affine, config.start_seed(i, 0), 1e-2).unwrap()))
            .collect();
        let (_, trace) = minimize_upper_bound(&s, &mix(), PolicyKind::Affine, &config, 100).unwrap();
        assert_eq!(trace.finals, inits);
        assert_eq!(
            trace.best_objective,
            inits.iter().copied().fold(f64::INFINITY, f64::min)
        );
    }

    #[test]
    fn ties_go_to_lowest_start() {
        let r = |start, objective| StartResult {
            start,
            seed: 0,
            initial_objective: objective,
            params: vec![start as f64],
            objective,
            incumbents: vec![objective],
            evaluations: 1,
        };
        let t = reduce_starts(vec![r(2, -1.0), r(0, -1.0), r(1, 0.0)]).unwrap();
        assert_eq!(t.best_start, 0);
        assert!(reduce_starts(vec![r(0, f64::INFINITY)]).is_err());
    }

    #[test]
    fn reseeds_on_non_finite_initialization() {
        let calls = RefCell::new(0);
        let f = |_: &[f64]| {
            *calls.borrow_mut() += 1;
            if *calls.borrow() <= 2 {
                f64::NAN
            } else {
                1.0
            }
        };
        let config = OptimizerConfig {
            iterations_per_start: 0,
            ..OptimizerConfig::default()
        };
        let r = run_start(f, PolicyKind::Affine, &config, 0).unwrap();
        assert_eq!(r.seed, config.start_seed(0, 2));
        assert!(run_start(|_: &[f64]| f64::NAN, PolicyKind::Affine, &config, 0).is_err());
    }

    #[test]
    fn evaluated_candidates_stay_nonnegative() {
        let s = MarketScenario::example2();
        let kind = PolicyKind::Mlp(Activation::Relu);
        let c = mix();
        let base = upper_bound_objective(&s, &c, kind, 50);
        let seen = RefCell::new(0usize);
        let checked = |p: &[f64]| {
            let policy = DriftPolicy::unflatten(kind, p, 20.0, 50.0).unwrap();
            for k in 0..=50 {
                let (v0, vm) = policy.eval_unchecked(k as f64);
                assert!(v0 >= 0.0 && vm >= 0.0);
            }
            *seen.borrow_mut() += 1;
            base(p)
        };
        let config = OptimizerConfig {
            iterations_per_start: 3,
            init_std: Some(0.1),
            ..OptimizerConfig::default()
        };
        run_start(checked, kind, &config, 0).unwrap();
        assert!(*seen.borrow() > 100);
    }
}
