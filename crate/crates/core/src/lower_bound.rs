//! Quasi-Monte-Carlo lower bound: simulate the candidate wealth process under
//! the feedback strategy of a fixed policy and average the realized utility.
//!
//! Paths are processed in fixed-size batches. Each batch yields a
//! [`BatchPartial`]; merging partials in batch order gives results that do not
//! depend on how batches were scheduled.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::closed_form::{crra_utility, feedback, Aggregates, BoundTable};
use crate::constraints::ConstraintSpec;
use crate::drift_policy::DriftPolicy;
use crate::error::{invalid, Error, Result};
use crate::market::MarketScenario;
use crate::normal::inverse_cdf_unchecked;
use crate::sobol::{to_unit, Sobol, SobolStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Number of leading Sobol points (after the origin) that are discarded.
    pub sobol_skip: u32,
    /// Paths per batch; fixes the reduction order.
    pub batch_size: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 20_000,
            n_steps: 1_000,
            sobol_skip: 4_000,
            batch_size: 1_000,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(invalid("sim.n_paths", "need at least 2 paths"));
        }
        if self.n_steps < 2 {
            return Err(invalid("sim.n_steps", "need at least 2 steps"));
        }
        if self.batch_size == 0 {
            return Err(invalid("sim.batch_size", "must be positive"));
        }
        let last = self.sobol_skip as u64 + self.n_paths as u64;
        if last >= u32::MAX as u64 {
            return Err(invalid("sim.n_paths", "Sobol index range exhausted"));
        }
        Ok(())
    }

    /// `(first_path, count)` for each batch, in reduction order.
    pub fn batches(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_paths)
            .step_by(self.batch_size)
            .map(move |first| (first, self.batch_size.min(self.n_paths - first)))
    }
}

/// Rows of standard normals, one row per path and one column per time step.
pub struct NormalRows<'a> {
    stream: SobolStream<'a>,
}

impl NormalRows<'_> {
    pub fn next_row(&mut self, out: &mut [f64]) {
        let (_, bits) = self.stream.next_point();
        for (o, &b) in out.iter_mut().zip(bits) {
            *o = inverse_cdf_unchecked(to_unit(b));
        }
    }
}

/// Normals for paths `first_path, first_path + 1, …`; path `p` uses Sobol
/// point `skip + 1 + p`.
pub fn sobol_normals(sobol: &Sobol, skip: u32, first_path: usize) -> NormalRows<'_> {
    NormalRows {
        stream: sobol.stream(skip + 1 + first_path as u32),
    }
}

/// How controls are chosen along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlRule {
    /// Feedback strategy of the policy, with the liquidity truncation at zero wealth.
    Feedback,
    /// No stock, `c = M = ((r + λ)W + Y) / (2(1 + λ))`: wealth grows along every path.
    RisklessHalfSaving,
}

#[derive(Debug, Clone, Copy)]
struct Step {
    a: Aggregates,
    dt: f64,
    sqrt_dt: f64,
    drift: f64,
    /// `e^{−Λ(t) − δ̃ t}`
    weight: f64,
    /// `λ g^γ`
    bequest_weight: f64,
    /// `e^{−(r + v0) dt − ΔΛ}`
    bond_factor: f64,
    /// `(μ_Y − σ_Y²/2) dt` while the next node is before retirement, else `None`.
    income_log_drift: Option<f64>,
}

/// Per-step schedule for one `(scenario, policy)` pair.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    steps: Vec<Step>,
    terminal: Aggregates,
    terminal_weight: f64,
    gamma: f64,
    income_volatility: f64,
    initial_wealth: f64,
    initial_income: f64,
    sobol: Sobol,
    config: SimulationConfig,
    rule: ControlRule,
}

impl SimulationPlan {
    pub fn new(
        scenario: &MarketScenario,
        constraint: &ConstraintSpec,
        policy: &DriftPolicy,
        config: SimulationConfig,
        rule: ControlRule,
    ) -> Result<Self> {
        config.validate()?;
        if !constraint.is_simulation_supported() {
            return Err(Error::UnsupportedConstraint(
                "only the single-stock portfolio-mix constraint with D = [0, 1] is simulated",
            ));
        }
        let sobol = Sobol::new(config.n_steps)?;
        let table = BoundTable::build(scenario, constraint, policy, 0.0, config.n_steps)?;
        let nodes: Vec<Aggregates> = table.nodes().copied().collect();
        let gamma = scenario.gamma();
        let delta = scenario.preferences.discount_rate;
        let m = &scenario.mortality;
        let weight = |t: f64| (-m.cumulative_hazard_unchecked(0.0, t) - delta * t).exp();
        let (mu_y, sigma_y) = (scenario.income.drift, scenario.income.volatility);
        let steps = nodes
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let dt = b.t - a.t;
                Step {
                    a,
                    dt,
                    sqrt_dt: dt.sqrt(),
                    drift: scenario.drift.eval(a.t),
                    weight: weight(a.t),
                    bequest_weight: a.hazard * a.g.powf(gamma),
                    bond_factor: (-(a.rate + a.v0) * dt - m.cumulative_hazard_unchecked(a.t, b.t)).exp(),
                    income_log_drift: (!b.retired).then_some((mu_y - 0.5 * sigma_y * sigma_y) * dt),
                }
            })
            .collect();
        let terminal = *nodes.last().expect("table has nodes");
        Ok(Self {
            steps,
            terminal,
            terminal_weight: weight(terminal.t),
            gamma,
            income_volatility: sigma_y,
            initial_wealth: scenario.initial_wealth,
            initial_income: scenario.income.initial,
            sobol,
            config,
            rule,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    /// Node times `t_0 = 0, …, t_N = T`.
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.a.t).chain(Some(self.terminal.t)).collect()
    }

    #[inline]
    fn controls(&self, s: &Step, w: f64, y: f64, liquidity: &mut LiquidityStats) -> (f64, f64, f64) {
        let a = &s.a;
        match self.rule {
            ControlRule::Feedback => {
                let st = feedback(a, self.gamma, self.income_volatility, w, y);
                if w > 0.0 {
                    (st.theta, st.consumption, st.bequest)
                } else {
                    let cap = y / (1.0 + a.hazard * a.g);
                    let c = st.consumption.min(cap);
                    liquidity.record(y - (1.0 + a.hazard * a.g) * c);
                    (0.0, c, c * a.g)
                }
            }
            ControlRule::RisklessHalfSaving => {
                let c = ((a.rate + a.hazard) * w + y) / (2.0 * (1.0 + a.hazard));
                (0.0, c, c)
            }
        }
    }

    /// Simulates paths `first..first + count`.
    pub fn simulate_batch(&self, first: usize, count: usize) -> Result<BatchPartial> {
        let n = self.steps.len();
        let mut out = BatchPartial::empty(n + 1);
        let mut rows = sobol_normals(&self.sobol, self.config.sobol_skip, first);
        let mut z = vec![0.0; n];
        for path in first..first + count {
            rows.next_row(&mut z);
            let mut w = self.initial_wealth;
            let mut y = self.initial_income;
            let mut total = 0.0;
            for (k, s) in self.steps.iter().enumerate() {
                let a = &s.a;
                let y_now = if a.retired { 0.0 } else { y };
                let (theta, c, m) = self.controls(s, w, y_now, &mut out.liquidity);
                total +=
                    s.dt * s.weight * (crra_utility(c, self.gamma) + s.bequest_weight * crra_utility(m, self.gamma));
                out.wealth[k] += w;
                out.face_value[k] += m - w;
                out.consumption[k] += c;
                out.theta[k] += theta;

                let dz = s.sqrt_dt * z[k];
                let dw = ((a.rate + a.hazard) * w + theta * (s.drift - a.rate) - c - a.hazard * m + y_now) * s.dt
                    + theta * a.sigma * dz;
                let next = (w + dw).max(0.0);
                out.min_wealth_change = out.min_wealth_change.min(next - w);
                w = next;
                if let Some(log_drift) = s.income_log_drift {
                    y *= (log_drift + self.income_volatility * dz).exp();
                }
            }
            out.wealth[n] += w;
            out.face_value[n] += 0.0;
            total += self.terminal_weight * crra_utility(w, self.gamma);
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "path {path}: realized utility {total} (terminal wealth {w})"
                )));
            }
            out.stats.push(total);
        }
        Ok(out)
    }

    /// Budget identity terms along paths `first..first + count`, using the
    /// artificial-market optimal wealth and unclamped strategy.
    pub fn budget_batch(&self, first: usize, count: usize, checkpoints: &[usize]) -> Result<BudgetPartial> {
        let n = self.steps.len();
        let mut out = BudgetPartial::empty(checkpoints.len());
        let mut rows = sobol_normals(&self.sobol, self.config.sobol_skip, first);
        let mut z = vec![0.0; n];
        for path in first..first + count {
            rows.next_row(&mut z);
            let mut w = self.initial_wealth;
            let mut y = self.initial_income;
            // ξ·B: state-price density times survival
            let mut pi = 1.0;
            let mut spent = 0.0;
            let mut received = 0.0;
            let mut cp = 0;
            for (k, s) in self.steps.iter().enumerate() {
                let a = &s.a;
                let y_now = if a.retired { 0.0 } else { y };
                let st = feedback(a, self.gamma, self.income_volatility, w, y_now);
                let outflow = st.consumption + a.hazard * st.bequest;
                let inflow = y_now + a.delta;
                let dz = s.sqrt_dt * z[k];
                let g_before = pi * w + spent - received;

                spent += pi * outflow * s.dt;
                received += pi * inflow * s.dt;
                w = (w - (outflow - inflow) * s.dt + st.theta_unclamped * a.sigma * (dz - a.kappa * s.dt))
                    / s.bond_factor;
                pi *= s.bond_factor * (a.kappa * dz - 0.5 * a.kappa * a.kappa * s.dt).exp();
                if cp < checkpoints.len() && checkpoints[cp] == k {
                    out.increments[cp].push(pi * w + spent - received - g_before);
                    cp += 1;
                }
                if let Some(log_drift) = s.income_log_drift {
                    y *= (log_drift + self.income_volatility * dz).exp();
                }
            }
            let lhs = spent + pi * w;
            if !(lhs.is_finite() && received.is_finite()) {
                return Err(Error::NonFinite(format!("budget path {path}")));
            }
            out.lhs.push(lhs);
            out.received.push(received);
            out.difference.push(lhs - received);
        }
        Ok(out)
    }
}

/// Running mean and sum of squared deviations, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiquidityStats {
    pub events: u64,
    /// Smallest wealth drift `Y − (1 + λg)c` applied at zero wealth.
    pub min_drift: f64,
}

impl LiquidityStats {
    fn record(&mut self, drift: f64) {
        self.events += 1;
        self.min_drift = self.min_drift.min(drift);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPartial {
    pub stats: Moments,
    pub wealth: Vec<f64>,
    pub face_value: Vec<f64>,
    pub consumption: Vec<f64>,
    pub theta: Vec<f64>,
    pub liquidity: LiquidityStats,
    pub min_wealth_change: f64,
}

impl BatchPartial {
    pub fn empty(nodes: usize) -> Self {
        Self {
            stats: Moments::default(),
            wealth: vec![0.0; nodes],
            face_value: vec![0.0; nodes],
            consumption: vec![0.0; nodes],
            theta: vec![0.0; nodes],
            liquidity: LiquidityStats {
                events: 0,
                min_drift: f64::INFINITY,
            },
            min_wealth_change: f64::INFINITY,
        }
    }

    pub fn merge(&mut self, other: &BatchPartial) {
        self.stats.merge(&other.stats);
        for (dst, src) in [
            (&mut self.wealth, &other.wealth),
            (&mut self.face_value, &other.face_value),
            (&mut self.consumption, &other.consumption),
            (&mut self.theta, &other.theta),
        ] {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        self.liquidity.events += other.liquidity.events;
        self.liquidity.min_drift = self.liquidity.min_drift.min(other.liquidity.min_drift);
        self.min_wealth_change = self.min_wealth_change.min(other.min_wealth_change);
    }
}

/// Path-averaged trajectories on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub wealth: Vec<f64>,
    /// `E[M* − W̄]`; zero at the horizon where no insurance is bought.
    pub face_value: Vec<f64>,
    pub consumption: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateValue {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub trajectory: Trajectory,
    pub liquidity: LiquidityStats,
    pub min_wealth_change: f64,
}

impl SimulationPlan {
    pub fn finish(&self, partial: BatchPartial) -> CandidateValue {
        let n = partial.stats.count as f64;
        let scale = |v: Vec<f64>| v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
        let mut face_value = scale(partial.face_value);
        if let Some(last) = face_value.last_mut() {
            *last = 0.0;
        }
        CandidateValue {
            estimate: partial.stats.mean,
            std_error: partial.stats.std_error(),
            n_paths: partial.stats.count as usize,
            trajectory: Trajectory {
                t: self.times(),
                wealth: scale(partial.wealth),
                face_value,
                consumption: scale(partial.consumption),
                theta: scale(partial.theta),
            },
            liquidity: partial.liquidity,
            min_wealth_change: partial.min_wealth_change,
        }
    }

    /// Runs every batch in order on the current thread.
    pub fn run(&self) -> Result<CandidateValue> {
        let mut total = BatchPartial::empty(self.steps.len() + 1);
        for (first, count) in self.config.batches() {
            total.merge(&self.simulate_batch(first, count)?);
        }
        Ok(self.finish(total))
    }
}

pub fn simulate_candidate_value(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    policy: &DriftPolicy,
    config: SimulationConfig,
) -> Result<CandidateValue> {
    SimulationPlan::new(scenario, constraint, policy, config, ControlRule::Feedback)?.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPartial {
    pub lhs: Moments,
    pub received: Moments,
    pub difference: Moments,
    pub increments: Vec<Moments>,
}

impl BudgetPartial {
    pub fn empty(checkpoints: usize) -> Self {
        Self {
            lhs: Moments::default(),
            received: Moments::default(),
            difference: Moments::default(),
            increments: vec![Moments::default(); checkpoints],
        }
    }

    pub fn merge(&mut self, other: &BudgetPartial) {
        self.lhs.merge(&other.lhs);
        self.received.merge(&other.received);
        self.difference.merge(&other.difference);
        for (a, b) in self.increments.iter_mut().zip(&other.increments) {
            a.merge(b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCheck {
    /// `E[∫ π e^{−Λ}(c + λM) dt + π_T e^{−Λ_T} W_T]`
    pub lhs: f64,
    /// `w0 + E[∫ π e^{−Λ}(Y + δ) dt]`
    pub rhs: f64,
    pub income_term: f64,
    /// Standardized deviation of `lhs − rhs` from zero.
    pub z_score: f64,
    pub std_error: f64,
    /// `(t, z)` of the mean increment of the discounted wealth-plus-spending process.
    pub martingale: Vec<(f64, f64)>,
}

/// Default steps at which the martingale increment is tested: every tenth of the grid.
pub fn default_checkpoints(n_steps: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..10).map(|i| i * n_steps / 10).collect();
    c.dedup();
    c
}

impl SimulationPlan {
    pub fn finish_budget(&self, partial: BudgetPartial, checkpoints: &[usize]) -> BudgetCheck {
        let w0 = self.initial_wealth;
        let se = partial.difference.std_error();
        let times = self.times();
        BudgetCheck {
            lhs: partial.lhs.mean,
            rhs: w0 + partial.received.mean,
            income_term: partial.received.mean,
            z_score: (partial.difference.mean - w0) / se,
            std_error: se,
            martingale: checkpoints
                .iter()
                .zip(&partial.increments)
                .map(|(&k, m)| (times[k], m.mean / m.std_error()))
                .collect(),
        }
    }

    pub fn run_budget(&self) -> Result<BudgetCheck> {
        let checkpoints = default_checkpoints(self.steps.len());
        let mut total = BudgetPartial::empty(checkpoints.len());
        for (first, count) in self.config.batches() {
            total.merge(&self.budget_batch(first, count, &checkpoints)?);
        }
        Ok(self.finish_budget(total, &checkpoints))
    }
}

pub fn verify_budget_constraint(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    policy: &DriftPolicy,
    config: SimulationConfig,
) -> Result<BudgetCheck> {
    SimulationPlan::new(scenario, constraint, policy, config, ControlRule::Feedback)?.run_budget()
}
