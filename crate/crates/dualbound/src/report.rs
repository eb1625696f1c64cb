//! Bound summaries and the CSV artifacts behind them.
//!
//! | file            | columns                                                                   |
//! |-----------------|---------------------------------------------------------------------------|
//! | `bounds.csv`    | method, upper, lower, std_error, gap, relative_gap, welfare_loss, budget_z |
//! | `vstar.csv`     | method, t, v0, v_minus (both sides of the jump at retirement)             |
//! | `trace.csv`     | method, start, iteration, incumbent                                       |
//! | `facevalue.csv` | method, t, face_value                                                     |
//! | `wealth.csv`    | method, t, wealth                                                         |
//!
//! Floats are written with 17 significant digits so every value re-reads exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dualbound_core::closed_form::{welfare_loss, GFunction};
use dualbound_core::drift_policy::TabulatedPolicy;
use dualbound_core::lower_bound::Trajectory;

use crate::run::{MethodOutcome, PhaseTimes, RunOutput};
use crate::CliError;

pub const BOUNDS_HEADER: [&str; 9] = [
    "method",
    "upper",
    "lower",
    "std_error",
    "gap",
    "relative_gap",
    "welfare_loss",
    "budget_z",
    "best_start",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub method: &'static str,
    pub upper: f64,
    pub lower: f64,
    pub std_error: f64,
    /// `|upper − lower|`
    pub gap: f64,
    /// `gap / |lower|`
    pub relative_gap: f64,
    /// NaN when the bound pair does not define a loss (e.g. lower above upper).
    pub welfare_loss: f64,
    pub budget_z: f64,
    pub best_start: usize,
    pub params: Vec<f64>,
    pub times: PhaseTimes,
}

impl BoundsReport {
    pub fn new(o: &MethodOutcome, gamma: f64) -> Self {
        let (lower, std_error) = o
            .candidate
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |c| (c.estimate, c.std_error));
        let gap = (o.upper - lower).abs();
        Self {
            method: o.method.label,
            upper: o.upper,
            lower,
            std_error,
            gap,
            relative_gap: gap / lower.abs(),
            welfare_loss: welfare_loss(o.upper, lower, gamma).unwrap_or(f64::NAN),
            budget_z: o.budget.z_score,
            best_start: o.trace.best_start,
            params: o.trace.best_params.clone(),
            times: o.times,
        }
    }

    /// Weak duality within three standard errors.
    pub fn is_consistent(&self) -> bool {
        self.lower <= self.upper + 3.0 * self.std_error
    }
}

pub fn reports(out: &RunOutput) -> Vec<BoundsReport> {
    let gamma = out.config.scenario.gamma();
    out.outcomes.iter().map(|o| BoundsReport::new(o, gamma)).collect()
}

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let wrap = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(io(path))
}

/// `(t, v0, v−)` on the quadrature nodes, with the left limit at retirement first.
pub fn policy_rows(o: &MethodOutcome) -> Vec<(f64, f64, f64)> {
    let left = o.table.retirement_left();
    let mut rows = Vec::new();
    for a in o.table.nodes() {
        if let Some(l) = left.filter(|l| l.t == a.t) {
            rows.push((l.t, l.v0, l.v_minus));
        }
        rows.push((a.t, a.v0, a.v_minus));
    }
    rows
}

pub fn write_bounds(path: &Path, reports: &[BoundsReport]) -> Result<(), CliError> {
    write_csv(
        path,
        &BOUNDS_HEADER,
        reports.iter().map(|r| {
            vec![
                r.method.to_string(),
                fmt(r.upper),
                fmt(r.lower),
                fmt(r.std_error),
                fmt(r.gap),
                fmt(r.relative_gap),
                fmt(r.welfare_loss),
                fmt(r.budget_z),
                r.best_start.to_string(),
            ]
        }),
    )
}

/// Writes every artifact of a run into `dir`.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let reps = reports(out);
    write_bounds(&dir.join("bounds.csv"), &reps)?;
    write_csv(
        &dir.join("vstar.csv"),
        &["method", "t", "v0", "v_minus"],
        out.outcomes.iter().flat_map(|o| {
            policy_rows(o)
                .into_iter()
                .map(move |(t, a, b)| vec![o.method.label.to_string(), fmt(t), fmt(a), fmt(b)])
        }),
    )?;
    write_csv(
        &dir.join("trace.csv"),
        &["method", "start", "iteration", "incumbent"],
        out.outcomes.iter().flat_map(|o| {
            o.trace.rows.iter().map(move |r| {
                vec![
                    o.method.label.to_string(),
                    r.start.to_string(),
                    r.iteration.to_string(),
                    fmt(r.incumbent),
                ]
            })
        }),
    )?;
    write_csv(
        &dir.join("facevalue.csv"),
        &["method", "t", "face_value"],
        trajectory_rows(out, |tr| &tr.face_value),
    )?;
    write_csv(
        &dir.join("wealth.csv"),
        &["method", "t", "wealth"],
        trajectory_rows(out, |tr| &tr.wealth),
    )?;
    let path = dir.join("report.txt");
    fs::write(&path, render_text(out)).map_err(io(&path))
}

fn trajectory_rows(out: &RunOutput, pick: fn(&Trajectory) -> &Vec<f64>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for o in &out.outcomes {
        let Some(c) = &o.candidate else { continue };
        for (t, v) in c.trajectory.t.iter().zip(pick(&c.trajectory)) {
            rows.push(vec![o.method.label.to_string(), fmt(*t), fmt(*v)]);
        }
    }
    rows
}

pub fn write_g(path: &Path, g: &GFunction) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let grid = g.grid();
    write_csv(
        path,
        &["t", "g"],
        g.values()
            .iter()
            .enumerate()
            .map(|(k, v)| vec![fmt(grid.node(k)), fmt(*v)]),
    )
}

/// Policies from a `vstar.csv`, keyed by method label.
pub fn read_vstar(path: &Path) -> Result<BTreeMap<String, TabulatedPolicy>, CliError> {
    let wrap = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let mut rows: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Validation(format!("{}: malformed row {rec:?}", path.display())))
        };
        let label = rec.get(0).unwrap_or_default().to_string();
        rows.entry(label).or_default().push((num(1)?, num(2)?, num(3)?));
    }
    rows.into_iter()
        .map(|(k, v)| {
            TabulatedPolicy::new(v)
                .map(|p| (k, p))
                .map_err(|e| CliError::Validation(e.to_string()))
        })
        .collect()
}

pub fn render_text(out: &RunOutput) -> String {
    let cfg = &out.config;
    let mut s = String::new();
    let _ = writeln!(s, "dualbound {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        "{:<8} {:>12} {:>12} {:>10} {:>10} {:>9} {:>9} {:>8}",
        "method", "upper", "lower", "s.e.", "gap", "rel.gap", "loss", "budget z"
    );
    for r in reports(out) {
        let _ = writeln!(
            s,
            "{:<8} {:>12.7} {:>12.7} {:>10.2e} {:>10.7} {:>8.4}% {:>8.4}% {:>8.3}",
            r.method,
            r.upper,
            r.lower,
            r.std_error,
            r.gap,
            100.0 * r.relative_gap,
            100.0 * r.welfare_loss,
            r.budget_z
        );
    }
    let _ = writeln!(s, "\n# timings (s): optimize / simulate / verify");
    for o in &out.outcomes {
        let t = o.times;
        let _ = writeln!(
            s,
            "{:<8} {:.3} / {:.3} / {:.3}",
            o.method.label,
            t.optimize.as_secs_f64(),
            t.simulate.as_secs_f64(),
            t.verify.as_secs_f64()
        );
    }
    let _ = writeln!(s, "\n# best parameters");
    for o in &out.outcomes {
        let p: Vec<String> = o.trace.best_params.iter().map(|x| fmt(*x)).collect();
        let _ = writeln!(s, "{} (start {}): {}", o.method.label, o.trace.best_start, p.join(" "));
    }
    let _ = writeln!(s, "\n# budget identity and martingale checks");
    for o in &out.outcomes {
        let b = &o.budget;
        let worst = b.martingale.iter().map(|(_, z)| z.abs()).fold(0.0, f64::max);
        let _ = writeln!(
            s,
            "{}: lhs {:.6} rhs {:.6} z {:.3}; max |z| of drift over {} checkpoints {:.3}",
            o.method.label,
            b.lhs,
            b.rhs,
            b.z_score,
            b.martingale.len(),
            worst
        );
    }
    let _ = writeln!(s, "\n# provenance");
    for o in &out.outcomes {
        let seeds: Vec<String> = o.trace.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "start seeds {}: {}", o.method.label, seeds.join(" "));
        if let Some(c) = &o.candidate {
            let _ = writeln!(
                s,
                "liquidity {}: {} zero-wealth steps, min drift {:.3e}",
                o.method.label, c.liquidity.events, c.liquidity.min_drift
            );
        }
    }
    let _ = writeln!(s, "\n# configuration\n{}", cfg.render());
    s
}
