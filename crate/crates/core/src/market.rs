//! Deterministic market coefficients and the artificial-market kernel.

use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::mortality::MortalityModel;

/// Piecewise-linear curve through `(t, value)` knots, flat beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(invalid("knots", "at least one knot is required"));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(invalid("knots", "knots must be finite"));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(invalid("knots", "knot times must be strictly increasing"));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|(s, _)| *s <= t);
        let (t0, v0) = k[i - 1];
        let (t1, v1) = k[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    fn max_slope(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

/// A deterministic coefficient curve `t ↦ value`.
#[derive(Debug, Clone, PartialEq)]
pub enum Curve {
    Constant(f64),
    /// `base + amplitude · sin(frequency · t)`
    Sinusoid {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
    Table(PiecewiseLinear),
}

impl Curve {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Constant(c) => *c,
            Curve::Sinusoid {
                base,
                amplitude,
                frequency,
            } => base + amplitude * (frequency * t).sin(),
            Curve::Table(table) => table.eval(t),
        }
    }

    /// Upper bound on `|d/dt curve|`.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Curve::Constant(_) => 0.0,
            Curve::Sinusoid {
                amplitude, frequency, ..
            } => (amplitude * frequency).abs(),
            Curve::Table(table) => table.max_slope(),
        }
    }

    /// Smallest value on a uniform sample of `[0, horizon]`, together with where it occurs.
    fn sampled_min(&self, horizon: f64, points: usize) -> (f64, f64) {
        (0..points)
            .map(|i| {
                let t = horizon * i as f64 / (points - 1) as f64;
                (t, self.eval(t))
            })
            .fold((0.0, f64::INFINITY), |acc, (t, v)| if v < acc.1 { (t, v) } else { acc })
    }
}

/// Geometric income driven by the stock's Brownian motion, stopped at retirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncomeProcess {
    pub drift: f64,
    pub volatility: f64,
    pub initial: f64,
}

/// CRRA preferences shared by consumption, bequest and terminal utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preferences {
    pub risk_aversion: f64,
    pub discount_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenario {
    pub rate: Curve,
    pub drift: Curve,
    pub volatility: Curve,
    pub income: IncomeProcess,
    pub initial_wealth: f64,
    pub preferences: Preferences,
    pub retirement: f64,
    pub horizon: f64,
    pub mortality: MortalityModel,
}

/// Named scenarios used throughout the tests and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Constant coefficients: r = 0.02, μ = 0.07, σ = 0.2.
    Example1,
    /// Perturbed stock drift μ(t) = 0.07 + 0.03 sin(t/2).
    Example2,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Example1 => "example1",
            Preset::Example2 => "example2",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "example1" => Some(Preset::Example1),
            "example2" => Some(Preset::Example2),
            _ => None,
        }
    }
}

impl MarketScenario {
    pub fn preset(preset: Preset) -> Self {
        let drift = match preset {
            Preset::Example1 => Curve::Constant(0.07),
            Preset::Example2 => Curve::Sinusoid {
                base: 0.07,
                amplitude: 0.03,
                frequency: 0.5,
            },
        };
        Self {
            rate: Curve::Constant(0.02),
            drift,
            volatility: Curve::Constant(0.2),
            income: IncomeProcess {
                drift: 0.01,
                volatility: 0.05,
                initial: 50.0,
            },
            initial_wealth: 200.0,
            preferences: Preferences {
                risk_aversion: 1.5,
                discount_rate: 0.02,
            },
            retirement: 20.0,
            horizon: 50.0,
            mortality: MortalityModel::default(),
        }
    }

    pub fn example1() -> Self {
        Self::preset(Preset::Example1)
    }

    pub fn example2() -> Self {
        Self::preset(Preset::Example2)
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.preferences.risk_aversion
    }

    /// Market price of risk without any drift adjustment, `-(μ - r)/σ`.
    #[inline]
    pub(crate) fn kappa0_unchecked(&self, t: f64) -> f64 {
        -(self.drift.eval(t) - self.rate.eval(t)) / self.volatility.eval(t)
    }

    #[inline]
    pub(crate) fn kappa_unchecked(&self, t: f64, v0: f64, v_minus: f64) -> f64 {
        -(self.drift.eval(t) + v_minus - (self.rate.eval(t) + v0)) / self.volatility.eval(t)
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                lo: 0.0,
                hi: self.horizon,
            })
        }
    }

    /// Market price of risk of the artificial market shifted by `(v0, v_minus)`.
    pub fn kappa(&self, t: f64, v0: f64, v_minus: f64) -> Result<f64> {
        self.check_time(t)?;
        if !(v0 >= 0.0) || !(v_minus >= 0.0) {
            return Err(Error::OutsideEffectiveDomain);
        }
        let sigma = self.volatility.eval(t);
        if !(sigma > 0.0) {
            return Err(invalid("volatility", "must be positive"));
        }
        Ok(self.kappa_unchecked(t, v0, v_minus))
    }

    pub fn artificial_point(&self, t: f64, v0: f64, v_minus: f64) -> Result<ArtificialMarketPoint> {
        let kappa = self.kappa(t, v0, v_minus)?;
        Ok(ArtificialMarketPoint {
            v0,
            v_minus,
            kappa,
            discount_rate: self.rate.eval(t) + v0,
        })
    }

    /// Hard invariants that make the closed forms well defined.
    pub fn check(&self) -> Result<()> {
        let gamma = self.gamma();
        if !(gamma > 0.0) || gamma == 1.0 || !gamma.is_finite() {
            return Err(invalid("gamma", "risk aversion must be positive and different from 1"));
        }
        if !(self.retirement >= 0.0 && self.retirement < self.horizon) {
            return Err(invalid("retirement", "need 0 <= T_R < T"));
        }
        if !(self.initial_wealth > 0.0) {
            return Err(invalid("initial_wealth", "must be positive"));
        }
        if !(self.income.initial >= 0.0) {
            return Err(invalid("income.initial", "must be nonnegative"));
        }
        if !(self.income.volatility >= 0.0) {
            return Err(invalid("income.volatility", "must be nonnegative"));
        }
        let (_, sigma_min) = self.volatility.sampled_min(self.horizon, VALIDATION_POINTS);
        if !(sigma_min > 0.0) {
            return Err(invalid("volatility", "must stay positive on [0, T]"));
        }
        Ok(())
    }

    /// Checks every scenario condition on a dense grid and reports each outcome.
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let gamma = self.gamma();
        checks.push(ConditionCheck::scalar(
            "risk_aversion",
            gamma > 0.0 && gamma != 1.0 && gamma.is_finite(),
        ));
        checks.push(ConditionCheck::scalar(
            "horizon",
            self.retirement >= 0.0 && self.retirement < self.horizon,
        ));
        checks.push(ConditionCheck::scalar("initial_wealth", self.initial_wealth > 0.0));
        checks.push(ConditionCheck::scalar("initial_income", self.income.initial >= 0.0));

        let grid = |i: usize| self.horizon * i as f64 / (VALIDATION_POINTS - 1) as f64;
        let first_violation = |pred: &dyn Fn(f64) -> bool| (0..VALIDATION_POINTS).map(grid).find(|&t| !pred(t));

        let sigma_y = self.income.volatility;
        let mu_y = self.income.drift;
        checks.push(ConditionCheck::on_grid(
            "sigma_positive",
            first_violation(&|t| self.volatility.eval(t) > 0.0),
        ));
        checks.push(ConditionCheck::on_grid(
            "Yt_constraint1",
            first_violation(&|t| sigma_y <= self.volatility.eval(t) * (1.0 + BOUNDARY_SLACK)),
        ));
        // μ_Y/σ_Y ≤ μ/σ, cross-multiplied so σ_Y = 0 stays meaningful
        checks.push(ConditionCheck::on_grid(
            "Yt_constraint2",
            first_violation(&|t| {
                let lhs = mu_y * self.volatility.eval(t);
                let rhs = self.drift.eval(t) * sigma_y;
                lhs <= rhs + BOUNDARY_SLACK * rhs.abs().max(f64::MIN_POSITIVE)
            }),
        ));
        ValidationReport { checks }
    }
}

const VALIDATION_POINTS: usize = 1000;
const BOUNDARY_SLACK: f64 = 1e-12;

/// Kernel quantities of the artificial market at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtificialMarketPoint {
    pub v0: f64,
    pub v_minus: f64,
    pub kappa: f64,
    /// `r(t) + v0(t)`
    pub discount_rate: f64,
}

/// Euler log-increment of the state-price density `π_v` over `[t, t + dt]`.
///
/// `dz` is the Brownian increment over the step (variance `dt`).
pub fn log_state_price_increment(
    scenario: &MarketScenario,
    t: f64,
    dt: f64,
    point: &ArtificialMarketPoint,
    dz: f64,
) -> Result<f64> {
    scenario.check_time(t)?;
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    Ok(log_increment(point.discount_rate, point.kappa, dt, dz))
}

#[inline]
pub(crate) fn log_increment(discount_rate: f64, kappa: f64, dt: f64, dz: f64) -> f64 {
    -discount_rate * dt + kappa * dz - 0.5 * kappa * kappa * dt
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// First grid time at which a time-dependent condition fails.
    pub first_violation: Option<f64>,
}

impl ConditionCheck {
    fn scalar(name: &'static str, passed: bool) -> Self {
        Self {
            name,
            passed,
            first_violation: None,
        }
    }

    fn on_grid(name: &'static str, first_violation: Option<f64>) -> Self {
        Self {
            name,
            passed: first_violation.is_none(),
            first_violation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}
