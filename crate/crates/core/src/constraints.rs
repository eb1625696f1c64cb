//! Trading-constraint catalog: the set `A` of admissible `(α, θ)`, its support
//! function `δ(v) = sup_{(α,θ)∈A} −(α v0 + θ·v−)` and effective domain `Ã`.

use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::error::{invalid, Error, Result};

/// Value of the support function: finite, or the `+∞` out-of-domain flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Finite(f64),
    Infinite,
}

impl Support {
    pub fn is_finite(self) -> bool {
        matches!(self, Support::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Support::Finite(x) => Some(x),
            Support::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// `A = R^{n+1}`.
    Unconstrained,
    /// Stocks `m+1..=n` cannot be held.
    NontradeableAssets { tradeable: usize },
    /// Stocks `m+1..=n` cannot be sold short.
    ShortSale { unrestricted: usize },
    /// Stocks `m+1..=n` cannot be bought.
    Buying { unrestricted: usize },
    /// `α + Σθ ≥ 0` and `θ ∈ (α + Σθ)·D` with `D = Π [lower_k, upper_k] ∋ 0`.
    PortfolioMix { lower: Vec<f64>, upper: Vec<f64> },
    /// `α + Σθ ≥ floor`.
    MinCapital { floor: f64 },
    /// `Ψ0 α + Σ Ψk θk ≥ fraction · (Ψ0 α⁺ + Σ Ψk θk⁺)`.
    Collateral { haircuts: Vec<f64>, fraction: f64 },
}

/// A constraint set on `(α, θ) ∈ R^{1+n}` with `n` stocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    kind: ConstraintKind,
    stocks: usize,
}

const COLLATERAL_SAMPLES: usize = 10_000;
const COLLATERAL_SEED: u64 = 0x5eed_c011;

impl ConstraintSpec {
    pub fn new(kind: ConstraintKind, stocks: usize) -> Result<Self> {
        if stocks == 0 {
            return Err(invalid("stocks", "at least one stock is required"));
        }
        match &kind {
            ConstraintKind::Unconstrained => {}
            ConstraintKind::NontradeableAssets { tradeable: m }
            | ConstraintKind::ShortSale { unrestricted: m }
            | ConstraintKind::Buying { unrestricted: m } => {
                if *m > stocks {
                    return Err(invalid("m", "cannot exceed the number of stocks"));
                }
            }
            ConstraintKind::PortfolioMix { lower, upper } => {
                if lower.len() != stocks || upper.len() != stocks {
                    return Err(Error::DimensionMismatch {
                        expected: stocks,
                        got: lower.len().min(upper.len()),
                    });
                }
                let ok = lower
                    .iter()
                    .zip(upper)
                    .all(|(l, u)| l.is_finite() && u.is_finite() && *l <= 0.0 && *u >= 0.0);
                if !ok {
                    return Err(invalid("D", "box bounds must be finite and contain the origin"));
                }
            }
            ConstraintKind::MinCapital { floor } => {
                if !(*floor >= 0.0) || !floor.is_finite() {
                    return Err(invalid("K", "must be finite and nonnegative"));
                }
            }
            ConstraintKind::Collateral { haircuts, fraction } => {
                if haircuts.len() != stocks + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: stocks + 1,
                        got: haircuts.len(),
                    });
                }
                if haircuts.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(invalid("psi", "each haircut must lie in [0, 1]"));
                }
                if !(0.0..=1.0).contains(fraction) {
                    return Err(invalid("gamma_c", "must lie in [0, 1]"));
                }
            }
        }
        Ok(Self { kind, stocks })
    }

    /// One stock, no short sales and no borrowing: `A = {α ≥ 0, θ ≥ 0}`.
    pub fn no_borrowing_no_shorting() -> Self {
        Self {
            kind: ConstraintKind::PortfolioMix {
                lower: vec![0.0],
                upper: vec![1.0],
            },
            stocks: 1,
        }
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn stocks(&self) -> usize {
        self.stocks
    }

    /// True for the single-stock `D = [0, 1]` case handled by the bound engines.
    pub fn is_simulation_supported(&self) -> bool {
        self.stocks == 1
            && matches!(&self.kind, ConstraintKind::PortfolioMix { lower, upper } if lower[0] == 0.0 && upper[0] == 1.0)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.stocks + 1 {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.stocks + 1,
                got: len,
            })
        }
    }

    /// Membership of a portfolio `x = (α, θ_1..θ_n)` in `A`.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x.len())?;
        let (alpha, theta) = (x[0], &x[1..]);
        let total = alpha + theta.iter().sum::<f64>();
        Ok(match &self.kind {
            ConstraintKind::Unconstrained => true,
            ConstraintKind::NontradeableAssets { tradeable } => theta[*tradeable..].iter().all(|&t| t == 0.0),
            ConstraintKind::ShortSale { unrestricted } => theta[*unrestricted..].iter().all(|&t| t >= 0.0),
            ConstraintKind::Buying { unrestricted } => theta[*unrestricted..].iter().all(|&t| t <= 0.0),
            ConstraintKind::PortfolioMix { lower, upper } => {
                total >= 0.0
                    && theta
                        .iter()
                        .zip(lower.iter().zip(upper))
                        .all(|(&t, (&l, &u))| t >= l * total && t <= u * total)
            }
            ConstraintKind::MinCapital { floor } => total >= *floor,
            ConstraintKind::Collateral { haircuts, fraction } => {
                let (lhs, pos) = x
                    .iter()
                    .zip(haircuts)
                    .fold((0.0, 0.0), |(a, b), (&xi, &p)| (a + p * xi, b + p * xi.max(0.0)));
                lhs >= fraction * pos
            }
        })
    }

    /// Support function `δ(v)` for `v = (v0, v_1..v_n)`.
    pub fn support(&self, v: &[f64]) -> Result<Support> {
        self.check_dim(v.len())?;
        let (v0, vm) = (v[0], &v[1..]);
        let zero_or_inf = |finite: bool| {
            if finite {
                Support::Finite(0.0)
            } else {
                Support::Infinite
            }
        };
        Ok(match &self.kind {
            ConstraintKind::Unconstrained => zero_or_inf(v.iter().all(|&x| x == 0.0)),
            ConstraintKind::NontradeableAssets { tradeable } => {
                zero_or_inf(v0 == 0.0 && vm[..*tradeable].iter().all(|&x| x == 0.0))
            }
            ConstraintKind::ShortSale { unrestricted } => zero_or_inf(
                v0 == 0.0
                    && vm[..*unrestricted].iter().all(|&x| x == 0.0)
                    && vm[*unrestricted..].iter().all(|&x| x >= 0.0),
            ),
            ConstraintKind::Buying { unrestricted } => zero_or_inf(
                v0 == 0.0
                    && vm[..*unrestricted].iter().all(|&x| x == 0.0)
                    && vm[*unrestricted..].iter().all(|&x| x <= 0.0),
            ),
            ConstraintKind::PortfolioMix { lower, upper } => {
                // with s = α + Σθ ≥ 0 and θ_k ∈ s[l_k, u_k], δ = sup_s s·slope
                let slope = -v0
                    + vm.iter()
                        .zip(lower.iter().zip(upper))
                        .map(|(&vk, (&l, &u))| {
                            let d = vk - v0;
                            (-l * d).max(-u * d)
                        })
                        .sum::<f64>();
                zero_or_inf(slope <= 0.0)
            }
            ConstraintKind::MinCapital { floor } => {
                if v0 >= 0.0 && vm.iter().all(|&x| x == v0) {
                    Support::Finite(-floor * v0)
                } else {
                    Support::Infinite
                }
            }
            ConstraintKind::Collateral { .. } => zero_or_inf(self.collateral_dual_sampled(v)),
        })
    }

    pub fn in_effective_domain(&self, v: &[f64]) -> Result<bool> {
        Ok(self.support(v)?.is_finite())
    }

    /// Approximate dual-cone test `v·x ≥ 0` over a fixed sample of unit directions in `A`.
    fn collateral_dual_sampled(&self, v: &[f64]) -> bool {
        let dim = self.stocks + 1;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tol = 1e-12 * norm;
        let mut rng = ChaCha8Rng::seed_from_u64(COLLATERAL_SEED);
        let mut x = vec![0.0; dim];
        for _ in 0..COLLATERAL_SAMPLES {
            for xi in x.iter_mut() {
                *xi = StandardNormal.sample(&mut rng);
            }
            let len = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            x.iter_mut().for_each(|a| *a /= len);
            if self.contains(&x).unwrap_or(false) {
                let dot: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
                if dot < -tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Projects a stock position onto `[0, W]`, the feasible range under `D = [0, 1]`.
pub fn clamp_stock_position(spec: &ConstraintSpec, theta: f64, wealth: f64) -> Result<f64> {
    if !spec.is_simulation_supported() {
        return Err(Error::UnsupportedConstraint(
            "only the single-stock portfolio-mix constraint with D = [0, 1] is simulated",
        ));
    }
    if !(wealth >= 0.0) {
        return Err(invalid("wealth", "must be nonnegative"));
    }
    Ok(theta.max(0.0).min(wealth))
}
