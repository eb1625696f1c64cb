//! Closed-form upper bounds for a deterministic drift adjustment `v(t)`, the
//! feedback strategy they imply, CRRA helpers and HJB residual checks.
//!
//! Every factor is a tail integral `∫_t^T e^{−∫_t^s ρ} f(s) ds` evaluated by the
//! backward trapezoid recursion in [`crate::quadrature::discounted_tail`] on a
//! grid split at retirement, so the policy's jump at `T_R` falls on a node.

use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::constraints::{ConstraintSpec, Support};
use crate::drift_policy::DriftPolicy;
use crate::error::{invalid, Error, Result};
use crate::market::MarketScenario;
use crate::quadrature::{discounted_tail, UniformGrid};

pub const DEFAULT_INTERVALS: usize = 100;

/// Discount rate `ρ_B` of the post-death factor, so that `g' = ρ_B g − 1`.
pub fn g_rate(scenario: &MarketScenario, t: f64) -> f64 {
    let gamma = scenario.gamma();
    let k0 = scenario.kappa0_unchecked(t);
    scenario.preferences.discount_rate / gamma
        + (gamma - 1.0) / gamma * scenario.rate.eval(t)
        + 0.5 * (gamma - 1.0) / (gamma * gamma) * k0 * k0
}

fn check_gamma(scenario: &MarketScenario) -> Result<()> {
    let gamma = scenario.gamma();
    if gamma == 1.0 || !(gamma > 0.0) {
        return Err(invalid("gamma", "risk aversion must be positive and different from 1"));
    }
    Ok(())
}

/// Post-death annuity factor `g` on a uniform grid ending at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct GFunction {
    grid: UniformGrid,
    values: Vec<f64>,
}

pub fn compute_g(scenario: &MarketScenario, grid: &UniformGrid) -> Result<GFunction> {
    check_gamma(scenario)?;
    if grid.end() != scenario.horizon || grid.start() < 0.0 {
        return Err(invalid("grid", "must lie in [0, T] and end at T"));
    }
    let rho = grid.sample(|t| g_rate(scenario, t));
    let h = grid.step();
    let decay: Vec<f64> = rho.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).collect();
    let ones = alloc::vec![1.0; rho.len()];
    let values = discounted_tail(h, &decay, &ones, 1.0)?;
    Ok(GFunction { grid: *grid, values })
}

impl GFunction {
    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation between nodes.
    pub fn at(&self, t: f64) -> Result<f64> {
        let (lo, hi) = (self.grid.start(), self.grid.end());
        if !(t >= lo && t <= hi) {
            return Err(Error::TimeOutOfRange { t, lo, hi });
        }
        Ok(interpolate(&self.grid, &self.values, t))
    }
}

fn interpolate(grid: &UniformGrid, values: &[f64], t: f64) -> f64 {
    let h = grid.step();
    if h == 0.0 {
        return values[0];
    }
    let x = (t - grid.start()) / h;
    let k = (x.floor().max(0.0) as usize).min(grid.intervals() - 1);
    let w = x - k as f64;
    values[k] + w * (values[k + 1] - values[k])
}

/// Every deterministic quantity the value function and strategy need at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub t: f64,
    pub g: f64,
    /// `F̃2(t)`
    pub tilde_f2: f64,
    /// `∫_t^{T_R} e^{−∫λ} F1 ds`, zero from retirement on.
    pub annuity: f64,
    /// `∫_t^T e^{−∫λ} δ(v) F2 ds`
    pub delta_term: f64,
    pub v0: f64,
    pub v_minus: f64,
    pub kappa: f64,
    pub rate: f64,
    pub sigma: f64,
    pub hazard: f64,
    /// `δ(v(t))`
    pub delta: f64,
    pub retired: bool,
}

#[derive(Debug, Clone)]
struct Segment {
    grid: UniformGrid,
    nodes: Vec<Aggregates>,
}

/// Aggregates for one `(scenario, policy)` pair on a grid anchored at `t0`.
///
/// Values at grid nodes are exact trapezoid results; between nodes they are
/// interpolated linearly.
#[derive(Debug, Clone)]
pub struct BoundTable {
    gamma: f64,
    income_volatility: f64,
    retirement: f64,
    working: Option<Segment>,
    retired: Segment,
}

/// Interval counts for the working and retirement segments of `[t0, T]`.
pub fn split_intervals(t0: f64, retirement: f64, horizon: f64, n: usize) -> (usize, usize) {
    if t0 >= retirement {
        return (0, n.max(1));
    }
    let n = n.max(2);
    let share = (n as f64 * (retirement - t0) / (horizon - t0)).round() as usize;
    let working = share.clamp(1, n - 1);
    (working, n - working)
}

impl BoundTable {
    pub fn build(
        scenario: &MarketScenario,
        constraint: &ConstraintSpec,
        policy: &DriftPolicy,
        t0: f64,
        n_intervals: usize,
    ) -> Result<Self> {
        let (nw, nr) = split_intervals(t0, scenario.retirement, scenario.horizon, n_intervals);
        Self::build_with_counts(scenario, constraint, policy, t0, nw, nr)
    }

    /// Like [`Self::build`] with explicit segment sizes; `n_working` is ignored from retirement on.
    pub fn build_with_counts(
        scenario: &MarketScenario,
        constraint: &ConstraintSpec,
        policy: &DriftPolicy,
        t0: f64,
        n_working: usize,
        n_retired: usize,
    ) -> Result<Self> {
        check_gamma(scenario)?;
        scenario.check_time(t0)?;
        if constraint.stocks() != 1 {
            return Err(Error::UnsupportedConstraint(
                "closed forms are derived for a single stock",
            ));
        }
        let tr = scenario.retirement;
        let retired_start = t0.max(tr);
        let retired_grid = UniformGrid::new(retired_start, scenario.horizon, n_retired)?;
        let retired = build_segment(scenario, constraint, policy, retired_grid, false, None)?;
        let working = if t0 < tr {
            if n_working == 0 {
                return Err(invalid("n_intervals", "working segment needs at least one interval"));
            }
            let grid = UniformGrid::new(t0, tr, n_working)?;
            Some(build_segment(
                scenario,
                constraint,
                policy,
                grid,
                true,
                Some(&retired.nodes[0]),
            )?)
        } else {
            None
        };
        Ok(Self {
            gamma: scenario.gamma(),
            income_volatility: scenario.income.volatility,
            retirement: tr,
            working,
            retired,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start(&self) -> &Aggregates {
        match &self.working {
            Some(seg) => &seg.nodes[0],
            None => &self.retired.nodes[0],
        }
    }

    /// Nodes in time order; at retirement only the post-jump node is listed.
    pub fn nodes(&self) -> impl Iterator<Item = &Aggregates> {
        let working = self
            .working
            .iter()
            .flat_map(|seg| seg.nodes[..seg.nodes.len() - 1].iter());
        working.chain(self.retired.nodes.iter())
    }

    /// Left-limit node at retirement, when the table has a working segment.
    pub fn retirement_left(&self) -> Option<&Aggregates> {
        self.working.as_ref().map(|seg| &seg.nodes[seg.nodes.len() - 1])
    }

    pub fn at(&self, t: f64) -> Result<Aggregates> {
        let seg = match &self.working {
            Some(seg) if t < self.retirement => seg,
            _ => &self.retired,
        };
        let (lo, hi) = (self.start().t, self.retired.grid.end());
        if !(t >= lo && t <= hi) {
            return Err(Error::TimeOutOfRange { t, lo, hi });
        }
        let grid = &seg.grid;
        let h = grid.step();
        if h == 0.0 {
            return Ok(seg.nodes[0]);
        }
        let x = (t - grid.start()) / h;
        let k = (x.floor().max(0.0) as usize).min(grid.intervals() - 1);
        let w = x - k as f64;
        let (a, b) = (&seg.nodes[k], &seg.nodes[k + 1]);
        let lerp = |p: f64, q: f64| p + w * (q - p);
        Ok(Aggregates {
            t,
            g: lerp(a.g, b.g),
            tilde_f2: lerp(a.tilde_f2, b.tilde_f2),
            annuity: lerp(a.annuity, b.annuity),
            delta_term: lerp(a.delta_term, b.delta_term),
            v0: lerp(a.v0, b.v0),
            v_minus: lerp(a.v_minus, b.v_minus),
            kappa: lerp(a.kappa, b.kappa),
            rate: lerp(a.rate, b.rate),
            sigma: lerp(a.sigma, b.sigma),
            hazard: lerp(a.hazard, b.hazard),
            delta: lerp(a.delta, b.delta),
            retired: a.retired,
        })
    }

    /// Upper bound at the anchor time for state `(W, Y)`.
    pub fn value_at_start(&self, wealth: f64, income: f64) -> Result<UpperBoundValue> {
        upper_bound_value(self.start(), self.gamma, wealth, income)
    }

    pub fn strategy(&self, a: &Aggregates, wealth: f64, income: f64) -> FeedbackStrategy {
        feedback(a, self.gamma, self.income_volatility, wealth, income)
    }
}

fn build_segment(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    policy: &DriftPolicy,
    grid: UniformGrid,
    left_at_end: bool,
    next: Option<&Aggregates>,
) -> Result<Segment> {
    let gamma = scenario.gamma();
    let n = grid.intervals();
    let h = grid.step();
    let mut nodes = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = grid.node(k);
        let (v0, vm) = if left_at_end && k == n {
            policy.eval_left(t)
        } else {
            policy.eval_unchecked(t)
        };
        if !(v0 >= 0.0 && vm >= 0.0) {
            return Err(Error::OutsideEffectiveDomain);
        }
        let delta = match constraint.support(&[v0, vm])? {
            Support::Finite(d) => d,
            Support::Infinite => return Err(Error::OutsideEffectiveDomain),
        };
        nodes.push(Aggregates {
            t,
            g: 0.0,
            tilde_f2: 0.0,
            annuity: 0.0,
            delta_term: 0.0,
            v0,
            v_minus: vm,
            kappa: scenario.kappa_unchecked(t, v0, vm),
            rate: scenario.rate.eval(t),
            sigma: scenario.volatility.eval(t),
            hazard: scenario.mortality.hazard_unchecked(t),
            delta,
            retired: !left_at_end,
        });
    }

    let c1 = (gamma - 1.0) / gamma;
    let c2 = 0.5 * (gamma - 1.0) / (gamma * gamma);
    let beta = scenario.preferences.discount_rate / gamma;
    let (mu_y, sigma_y) = (scenario.income.drift, scenario.income.volatility);

    let mortality: Vec<f64> = nodes
        .windows(2)
        .map(|w| scenario.mortality.cumulative_hazard_unchecked(w[0].t, w[1].t))
        .collect();
    let trap = |f: &dyn Fn(&Aggregates) -> f64| -> Vec<f64> {
        nodes.windows(2).map(|w| 0.5 * h * (f(&w[0]) + f(&w[1]))).collect()
    };

    let g_decay = trap(&|a| g_rate(scenario, a.t));
    let ones = alloc::vec![1.0; n + 1];
    let g = discounted_tail(h, &g_decay, &ones, next.map_or(1.0, |a| a.g))?;

    let f2_decay: Vec<f64> = trap(&|a| c1 * (a.rate + a.v0) + c2 * a.kappa * a.kappa)
        .iter()
        .zip(&mortality)
        .map(|(q, m)| q + m + beta * h)
        .collect();
    let f2_source: Vec<f64> = nodes.iter().zip(&g).map(|(a, g)| 1.0 + a.hazard * g).collect();
    let f2 = discounted_tail(h, &f2_decay, &f2_source, next.map_or(1.0, |a| a.tilde_f2))?;

    let d_decay: Vec<f64> = trap(&|a| a.rate + a.v0)
        .iter()
        .zip(&mortality)
        .map(|(q, m)| q + m)
        .collect();
    let d_source: Vec<f64> = nodes.iter().map(|a| a.delta).collect();
    let d = discounted_tail(h, &d_decay, &d_source, next.map_or(0.0, |a| a.delta_term))?;

    let annuity = if left_at_end {
        let decay: Vec<f64> = trap(&|a| -(a.rate + a.v0) + a.kappa * sigma_y)
            .iter()
            .zip(&mortality)
            .map(|(q, m)| m - mu_y * h - q)
            .collect();
        discounted_tail(h, &decay, &ones, 0.0)?
    } else {
        alloc::vec![0.0; n + 1]
    };

    for (k, a) in nodes.iter_mut().enumerate() {
        a.g = g[k];
        a.tilde_f2 = f2[k];
        a.delta_term = d[k];
        a.annuity = annuity[k];
    }
    if nodes
        .iter()
        .any(|a| !(a.g.is_finite() && a.tilde_f2.is_finite() && a.annuity.is_finite()))
    {
        return Err(Error::NonFinite("bound aggregates".into()));
    }
    Ok(Segment { grid, nodes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBoundValue {
    pub value: f64,
    /// `F̃1` in retirement, `F̃3` while working.
    pub wealth_aggregate: f64,
    pub tilde_f2: f64,
    pub t: f64,
    pub wealth: f64,
    pub income: f64,
}

/// `F̃^{1−γ} F̃2^γ / (1−γ)` with `F̃ = W + Y·annuity + δ-term`.
pub fn upper_bound_value(a: &Aggregates, gamma: f64, wealth: f64, income: f64) -> Result<UpperBoundValue> {
    if !(wealth > 0.0) {
        return Err(invalid("wealth", "must be positive"));
    }
    if !(income >= 0.0) {
        return Err(invalid("income", "must be nonnegative"));
    }
    let f = wealth + income * a.annuity + a.delta_term;
    if !(f > 0.0) {
        return Err(invalid("wealth", "total wealth aggregate must be positive"));
    }
    let value = f.powf(1.0 - gamma) * a.tilde_f2.powf(gamma) / (1.0 - gamma);
    Ok(UpperBoundValue {
        value,
        wealth_aggregate: f,
        tilde_f2: a.tilde_f2,
        t: a.t,
        wealth,
        income,
    })
}

fn anchored(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    policy: &DriftPolicy,
    t: f64,
    n_intervals: usize,
) -> Result<BoundTable> {
    BoundTable::build(scenario, constraint, policy, t, n_intervals)
}

/// Retirement-phase bound `V_R(t, W)` for `t ∈ [T_R, T]`.
pub fn upper_bound_retirement(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    policy: &DriftPolicy,
    t: f64,
    wealth: f64,
    n_intervals: usize,
) -> Result<UpperBoundValue> {
    if !(t >= scenario.retirement && t <= scenario.horizon) {
        return Err(Error::TimeOutOfRange {
            t,
            lo: scenario.retirement,
            hi: scenario.horizon,
        });
    }
    anchored(scenario, constraint, policy, t, n_intervals)?.value_at_start(wealth, 0.0)
}

/// Working-phase bound `J̃(t, W, Y)` for `t ∈ [0, T_R]`.
pub fn upper_bound_working(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    policy: &DriftPolicy,
    t: f64,
    wealth: f64,
    income: f64,
    n_intervals: usize,
) -> Result<UpperBoundValue> {
    if !(t >= 0.0 && t <= scenario.retirement) {
        return Err(Error::TimeOutOfRange {
            t,
            lo: 0.0,
            hi: scenario.retirement,
        });
    }
    anchored(scenario, constraint, policy, t, n_intervals)?.value_at_start(wealth, income)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackStrategy {
    /// Stock position after projection onto `[0, W]`.
    pub theta: f64,
    pub theta_unclamped: f64,
    pub consumption: f64,
    /// Wealth plus insurance face value, `M*`.
    pub bequest: f64,
    pub face_value: f64,
    /// Insurance premium rate `λ (M* − W)`.
    pub premium: f64,
}

/// Optimal artificial-market strategy from precomputed aggregates.
pub fn feedback(a: &Aggregates, gamma: f64, income_volatility: f64, wealth: f64, income: f64) -> FeedbackStrategy {
    let f = wealth + income * a.annuity + a.delta_term;
    let raw = -f * a.kappa / (gamma * a.sigma) - income_volatility / a.sigma * income * a.annuity;
    let consumption = f / a.tilde_f2;
    let bequest = consumption * a.g;
    FeedbackStrategy {
        theta: raw.max(0.0).min(wealth.max(0.0)),
        theta_unclamped: raw,
        consumption,
        bequest,
        face_value: bequest - wealth,
        premium: a.hazard * (bequest - wealth),
    }
}

pub fn feedback_strategy(
    scenario: &MarketScenario,
    constraint: &ConstraintSpec,
    policy: &DriftPolicy,
    t: f64,
    wealth: f64,
    income: f64,
    n_intervals: usize,
) -> Result<FeedbackStrategy> {
    let table = anchored(scenario, constraint, policy, t, n_intervals)?;
    let income = if t >= scenario.retirement { 0.0 } else { income };
    Ok(table.strategy(table.start(), wealth, income))
}

/// Inverse marginal utility `z^{−1/γ}` of CRRA utility.
pub fn crra_dual_inverse(z: f64, gamma: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(invalid("z", "must be positive"));
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    Ok(z.powf(-1.0 / gamma))
}

#[inline]
pub fn crra_utility(x: f64, gamma: f64) -> f64 {
    x.powf(1.0 - gamma) / (1.0 - gamma)
}

/// Certainty-equivalent loss `1 − (lower/upper)^{1/(1−γ)}`.
pub fn welfare_loss(upper: f64, lower: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || gamma == 1.0 {
        return Err(invalid("gamma", "must be positive and different from 1"));
    }
    let sign_ok = if gamma > 1.0 {
        upper < 0.0 && lower < 0.0
    } else {
        upper > 0.0 && lower > 0.0
    };
    if !sign_ok {
        return Err(invalid(
            "bounds",
            "utility values have the wrong sign for this risk aversion",
        ));
    }
    if lower > upper {
        return Err(invalid("bounds", "lower bound exceeds upper bound"));
    }
    Ok(1.0 - (lower / upper).powf(1.0 / (1.0 - gamma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HjbKind {
    Bequest,
    Retirement,
    Working,
}

/// Model coefficients entering an HJB equation at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbCoefficients {
    pub rate: f64,
    pub kappa: f64,
    pub v0: f64,
    pub delta: f64,
    pub hazard: f64,
    pub g: f64,
    pub discount: f64,
    pub gamma: f64,
    pub income_drift: f64,
    pub income_volatility: f64,
}

impl HjbCoefficients {
    /// Coefficients at `t`; `g` must be supplied by the caller. For the bequest
    /// equation `policy` is ignored and `κ` is the unadjusted market price of risk.
    pub fn at(
        kind: HjbKind,
        scenario: &MarketScenario,
        constraint: &ConstraintSpec,
        policy: &DriftPolicy,
        t: f64,
        g: f64,
    ) -> Result<Self> {
        let (v0, vm) = match kind {
            HjbKind::Bequest => (0.0, 0.0),
            _ => policy.evaluate(t)?,
        };
        let delta = match kind {
            HjbKind::Bequest => 0.0,
            _ => constraint
                .support(&[v0, vm])?
                .finite()
                .ok_or(Error::OutsideEffectiveDomain)?,
        };
        Ok(Self {
            rate: scenario.rate.eval(t),
            kappa: scenario.kappa(t, v0, vm)?,
            v0,
            delta,
            hazard: scenario.mortality.hazard(t)?,
            g,
            discount: scenario.preferences.discount_rate,
            gamma: scenario.gamma(),
            income_drift: scenario.income.drift,
            income_volatility: scenario.income.volatility,
        })
    }
}

/// Relative finite-difference steps for [`hjb_residual`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub time: f64,
    pub state: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self {
            time: 1e-5,
            state: 1e-5,
        }
    }
}

/// HJB residual of `value(t, W, Y)` at an interior point, divided by the
/// magnitude of the largest term. Derivatives are central differences.
#[allow(clippy::too_many_arguments)]
pub fn hjb_residual(
    kind: HjbKind,
    scenario: &MarketScenario,
    c: &HjbCoefficients,
    value: impl Fn(f64, f64, f64) -> f64,
    t: f64,
    w: f64,
    y: f64,
    steps: FdSteps,
) -> Result<f64> {
    let (lo, hi) = match kind {
        HjbKind::Bequest => (0.0, scenario.horizon),
        HjbKind::Retirement => (scenario.retirement, scenario.horizon),
        HjbKind::Working => (0.0, scenario.retirement),
    };
    let ht = steps.time * t.abs().max(1.0);
    if !(t - ht > lo && t + ht < hi) {
        return Err(invalid("t", "point must be interior"));
    }
    if !(w > 0.0) || (kind == HjbKind::Working && !(y > 0.0)) {
        return Err(invalid("state", "point must be interior"));
    }
    let hw = steps.state * w;
    let v = value(t, w, y);
    let v_t = (value(t + ht, w, y) - value(t - ht, w, y)) / (2.0 * ht);
    let v_w = (value(t, w + hw, y) - value(t, w - hw, y)) / (2.0 * hw);
    let v_ww = (value(t, w + hw, y) - 2.0 * v + value(t, w - hw, y)) / (hw * hw);
    let gamma = c.gamma;
    let consumption = gamma / (1.0 - gamma) * v_w.powf((gamma - 1.0) / gamma);

    let mut terms: Vec<f64> = match kind {
        HjbKind::Bequest => alloc::vec![
            -c.discount * v,
            v_t,
            v_w * c.rate * w,
            -0.5 * c.kappa * c.kappa * v_w * v_w / v_ww,
            consumption,
        ],
        HjbKind::Retirement => alloc::vec![
            -(c.hazard + c.discount) * v,
            v_t,
            v_w * ((c.rate + c.hazard + c.v0) * w + c.delta),
            -0.5 * c.kappa * c.kappa * v_w * v_w / v_ww,
            (1.0 + c.hazard * c.g) * consumption,
        ],
        HjbKind::Working => {
            let hy = steps.state * y;
            let v_y = (value(t, w, y + hy) - value(t, w, y - hy)) / (2.0 * hy);
            let v_yy = (value(t, w, y + hy) - 2.0 * v + value(t, w, y - hy)) / (hy * hy);
            let v_wy = (value(t, w + hw, y + hy) - value(t, w + hw, y - hy) - value(t, w - hw, y + hy)
                + value(t, w - hw, y - hy))
                / (4.0 * hw * hy);
            let sy = c.income_volatility;
            let cross = v_w * c.kappa - v_wy * sy * y;
            alloc::vec![
                -(c.hazard + c.discount) * v,
                v_t,
                v_w * ((c.rate + c.hazard + c.v0) * w + y + c.delta),
                v_y * c.income_drift * y,
                0.5 * v_yy * sy * sy * y * y,
                -cross * cross / (2.0 * v_ww),
                (1.0 + c.hazard * c.g) * consumption,
            ]
        }
    };
    let scale = terms.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sum: f64 = terms.drain(..).sum();
    if !(scale > 0.0) || !sum.is_finite() {
        return Err(Error::NonFinite("hjb residual".into()));
    }
    Ok(sum / scale)
}
