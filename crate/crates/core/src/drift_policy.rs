//! Drift-adjustment policies `t ↦ v(t) = (v0(t), v−(t))`.

use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

pub const AFFINE_PARAMS: usize = 8;
pub const HIDDEN: usize = 10;
pub const MLP_PARAMS: usize = 4 * HIDDEN + 2;
pub const DEFAULT_SNAKE_FREQUENCY: f64 = 10.0;
pub const DEFAULT_MLP_INIT_STD: f64 = 1e-4;
pub const DEFAULT_AFFINE_INIT_STD: f64 = 1e-2;

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// `x + sin²(a x)/a`.
pub fn snake(x: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(invalid("a", "snake frequency must be positive"));
    }
    Ok(snake_unchecked(x, a))
}

#[inline]
fn snake_unchecked(x: f64, a: f64) -> f64 {
    let s = (a * x).sin();
    x + s * s / a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Snake { frequency: f64 },
}

impl Activation {
    pub fn snake() -> Self {
        Activation::Snake {
            frequency: DEFAULT_SNAKE_FREQUENCY,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => pos(x),
            Activation::Snake { frequency } => snake_unchecked(x, frequency),
        }
    }

    fn max_slope(self) -> f64 {
        match self {
            Activation::Relu => 1.0,
            Activation::Snake { .. } => 2.0,
        }
    }
}

/// Two affine pieces in `t`, switching at retirement, each output clipped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    coeffs: [f64; AFFINE_PARAMS],
    retirement: f64,
    horizon: f64,
}

impl AffinePolicy {
    pub fn new(coeffs: [f64; AFFINE_PARAMS], retirement: f64, horizon: f64) -> Result<Self> {
        if !(retirement >= 0.0 && retirement <= horizon) {
            return Err(invalid("retirement", "need 0 <= T_R <= T"));
        }
        Ok(Self {
            coeffs,
            retirement,
            horizon,
        })
    }

    pub fn coeffs(&self) -> &[f64; AFFINE_PARAMS] {
        &self.coeffs
    }

    #[inline]
    fn eval(&self, t: f64, left: bool) -> (f64, f64) {
        let working = t < self.retirement || (left && t == self.retirement);
        let a = if working { &self.coeffs[..4] } else { &self.coeffs[4..] };
        (pos(a[0] + a[1] * t), pos(a[2] + a[3] * t))
    }
}

/// The 1-10-2 network: `H_i = f(w_i t + b_i)`, `v0 = (Σ w_{i+10} H_i + b_11)⁺`,
/// `v− = (Σ w_{i+20} H_i + b_12)⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    weights: [f64; 3 * HIDDEN],
    biases: [f64; HIDDEN + 2],
    activation: Activation,
    horizon: f64,
}

impl MlpPolicy {
    pub fn new(params: &[f64], activation: Activation, horizon: f64) -> Result<Self> {
        if params.len() != MLP_PARAMS {
            return Err(Error::DimensionMismatch {
                expected: MLP_PARAMS,
                got: params.len(),
            });
        }
        if let Activation::Snake { frequency } = activation {
            if !(frequency > 0.0) {
                return Err(invalid("snake_frequency", "must be positive"));
            }
        }
        let mut weights = [0.0; 3 * HIDDEN];
        let mut biases = [0.0; HIDDEN + 2];
        weights.copy_from_slice(&params[..3 * HIDDEN]);
        biases.copy_from_slice(&params[3 * HIDDEN..]);
        Ok(Self {
            weights,
            biases,
            activation,
            horizon,
        })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    fn eval(&self, t: f64) -> (f64, f64) {
        let (w, b) = (&self.weights, &self.biases);
        let mut v0 = b[HIDDEN];
        let mut vm = b[HIDDEN + 1];
        for i in 0..HIDDEN {
            let h = self.activation.apply(w[i] * t + b[i]);
            v0 += w[i + HIDDEN] * h;
            vm += w[i + 2 * HIDDEN] * h;
        }
        (pos(v0), pos(vm))
    }

    /// Bound on `|dv/dt|` for either output.
    pub fn lipschitz_bound(&self) -> f64 {
        let w = &self.weights;
        let slope = self.activation.max_slope();
        let out = |offset: usize| (0..HIDDEN).map(|i| (w[i + offset] * w[i]).abs() * slope).sum::<f64>();
        out(HIDDEN).max(out(2 * HIDDEN))
    }
}

/// Piecewise-linear policy through `(t, v0, v−)` rows, as read back from a results file.
///
/// A time may appear twice to encode a jump: the first row is the left limit.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPolicy {
    rows: Vec<(f64, f64, f64)>,
}

impl TabulatedPolicy {
    pub fn new(rows: Vec<(f64, f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(invalid("rows", "need at least two rows"));
        }
        if rows
            .iter()
            .any(|&(t, a, b)| !t.is_finite() || !(a >= 0.0) || !(b >= 0.0))
        {
            return Err(invalid("rows", "times must be finite and rates nonnegative"));
        }
        for w in rows.windows(3) {
            if w[0].0 == w[2].0 {
                return Err(invalid("rows", "a time may repeat at most twice"));
            }
        }
        if rows.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(invalid("rows", "times must be nondecreasing"));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(f64, f64, f64)] {
        &self.rows
    }

    fn eval(&self, t: f64, left: bool) -> (f64, f64) {
        let r = &self.rows;
        let first = r[0];
        let last = r[r.len() - 1];
        if t <= first.0 {
            return (first.1, first.2);
        }
        if t >= last.0 {
            return (last.1, last.2);
        }
        // index of the first row strictly after t (or at t for the left limit)
        let i = if left {
            r.partition_point(|row| row.0 < t)
        } else {
            r.partition_point(|row| row.0 <= t)
        };
        let (a, b) = (r[i - 1], r[i]);
        if b.0 == a.0 {
            return (b.1, b.2);
        }
        let w = (t - a.0) / (b.0 - a.0);
        (a.1 + w * (b.1 - a.1), a.2 + w * (b.2 - a.2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Affine,
    Mlp(Activation),
}

impl PolicyKind {
    pub fn param_count(self) -> usize {
        match self {
            PolicyKind::Affine => AFFINE_PARAMS,
            PolicyKind::Mlp(_) => MLP_PARAMS,
        }
    }

    pub fn default_init_std(self) -> f64 {
        match self {
            PolicyKind::Affine => DEFAULT_AFFINE_INIT_STD,
            PolicyKind::Mlp(_) => DEFAULT_MLP_INIT_STD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)] // evaluated in hot loops; keep the network inline
pub enum DriftPolicy {
    Affine(AffinePolicy),
    Mlp(MlpPolicy),
    Tabulated(TabulatedPolicy),
}

impl DriftPolicy {
    /// The policy with `v ≡ 0`, i.e. the unadjusted market.
    pub fn zero(retirement: f64, horizon: f64) -> Result<Self> {
        Ok(DriftPolicy::Affine(AffinePolicy::new(
            [0.0; AFFINE_PARAMS],
            retirement,
            horizon,
        )?))
    }

    fn horizon(&self) -> Option<f64> {
        match self {
            DriftPolicy::Affine(p) => Some(p.horizon),
            DriftPolicy::Mlp(p) => Some(p.horizon),
            DriftPolicy::Tabulated(_) => None,
        }
    }

    pub fn evaluate(&self, t: f64) -> Result<(f64, f64)> {
        let hi = self.horizon().unwrap_or(f64::INFINITY);
        if !(t >= 0.0 && t <= hi) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi });
        }
        Ok(self.eval_unchecked(t))
    }

    #[inline]
    pub fn eval_unchecked(&self, t: f64) -> (f64, f64) {
        match self {
            DriftPolicy::Affine(p) => p.eval(t, false),
            DriftPolicy::Mlp(p) => p.eval(t),
            DriftPolicy::Tabulated(p) => p.eval(t, false),
        }
    }

    /// Left limit `v(t−)`; differs from [`Self::eval_unchecked`] only at a jump.
    #[inline]
    pub fn eval_left(&self, t: f64) -> (f64, f64) {
        match self {
            DriftPolicy::Affine(p) => p.eval(t, true),
            DriftPolicy::Mlp(p) => p.eval(t),
            DriftPolicy::Tabulated(p) => p.eval(t, true),
        }
    }

    pub fn kind(&self) -> Option<PolicyKind> {
        match self {
            DriftPolicy::Affine(_) => Some(PolicyKind::Affine),
            DriftPolicy::Mlp(p) => Some(PolicyKind::Mlp(p.activation)),
            DriftPolicy::Tabulated(_) => None,
        }
    }

    pub fn flatten(&self) -> Result<Vec<f64>> {
        match self {
            DriftPolicy::Affine(p) => Ok(p.coeffs.to_vec()),
            DriftPolicy::Mlp(p) => Ok(p.weights.iter().chain(&p.biases).copied().collect()),
            DriftPolicy::Tabulated(_) => Err(invalid("policy", "tabulated policies have no parameter vector")),
        }
    }

    pub fn unflatten(kind: PolicyKind, params: &[f64], retirement: f64, horizon: f64) -> Result<Self> {
        if params.len() != kind.param_count() {
            return Err(Error::DimensionMismatch {
                expected: kind.param_count(),
                got: params.len(),
            });
        }
        match kind {
            PolicyKind::Affine => {
                let mut c = [0.0; AFFINE_PARAMS];
                c.copy_from_slice(params);
                Ok(DriftPolicy::Affine(AffinePolicy::new(c, retirement, horizon)?))
            }
            PolicyKind::Mlp(act) => Ok(DriftPolicy::Mlp(MlpPolicy::new(params, act, horizon)?)),
        }
    }
}

/// Seeded i.i.d. `N(0, std²)` draws, one per parameter.
pub fn init_params_with_std(kind: PolicyKind, seed: u64, std: f64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, std).map_err(|_| invalid("init_std", "must be finite and nonnegative"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..kind.param_count()).map(|_| normal.sample(&mut rng)).collect())
}

/// Initial parameters with the default scale: `1e-4` for the network, `1e-2` for affine.
pub fn init_params(kind: PolicyKind, seed: u64) -> Vec<f64> {
    init_params_with_std(kind, seed, kind.default_init_std()).expect("default scale is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    const TR: f64 = 20.0;
    const T: f64 = 50.0;

    #[test]
    fn zero_policies() {
        let p = DriftPolicy::zero(TR, T).unwrap();
        for t in [0.0, 10.0, 20.0, 50.0] {
            assert_eq!(p.evaluate(t).unwrap(), (0.0, 0.0));
        }
        let m = DriftPolicy::unflatten(PolicyKind::Mlp(Activation::Relu), &[0.0; MLP_PARAMS], TR, T).unwrap();
        assert_eq!(m.evaluate(33.0).unwrap(), (0.0, 0.0));
        assert!(p.evaluate(50.5).is_err());
        assert!(p.evaluate(-0.1).is_err());
    }

    #[test]
    fn affine_phase_switch() {
        let mut c = [0.0; 8];
        c[0] = 0.1;
        c[1] = -0.01;
        let p = DriftPolicy::unflatten(PolicyKind::Affine, &c, TR, T).unwrap();
        assert_eq!(p.evaluate(20.0).unwrap(), (0.0, 0.0));
        assert_relative_eq!(p.evaluate(5.0).unwrap().0, 0.05);
        assert_eq!(p.evaluate(12.0).unwrap().0, 0.0);
        let mut c = [0.0; 8];
        c[0] = 0.3;
        let p = DriftPolicy::unflatten(PolicyKind::Affine, &c, TR, T).unwrap();
        assert_eq!(p.eval_left(20.0), (0.3, 0.0));
        assert_eq!(p.eval_unchecked(20.0), (0.0, 0.0));
    }

    #[test]
    fn snake_examples() {
        assert_eq!(snake(0.0, 10.0).unwrap(), 0.0);
        assert_relative_eq!(snake(PI / 20.0, 10.0).unwrap(), PI / 20.0 + 0.1, max_relative = 1e-15);
        assert_relative_eq!(snake(PI / 10.0, 10.0).unwrap(), PI / 10.0, max_relative = 1e-15);
        assert!(snake(1.0, 0.0).is_err());
        assert!(snake(1.0, -2.0).is_err());
    }

    #[test]
    fn init_is_deterministic_with_expected_sizes() {
        let k = PolicyKind::Mlp(Activation::snake());
        assert_eq!(init_params(k, 7), init_params(k, 7));
        assert_ne!(init_params(k, 7), init_params(k, 8));
        assert_eq!(init_params(PolicyKind::Affine, 1).len(), 8);
        assert_eq!(init_params(k, 1).len(), 42);
    }

    #[test]
    fn mlp_init_scale() {
        let k = PolicyKind::Mlp(Activation::Relu);
        let draws: Vec<f64> = (0..240).flat_map(|seed| init_params(k, seed)).collect();
        assert!(draws.len() >= 10_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.9e-4..=1.1e-4).contains(&sd), "sd {sd}");
    }

    #[test]
    fn flatten_lengths_and_errors() {
        let a = DriftPolicy::unflatten(PolicyKind::Affine, &init_params(PolicyKind::Affine, 3), TR, T).unwrap();
        assert_eq!(a.flatten().unwrap().len(), 8);
        let k = PolicyKind::Mlp(Activation::Relu);
        let m = DriftPolicy::unflatten(k, &init_params(k, 3), TR, T).unwrap();
        assert_eq!(m.flatten().unwrap().len(), 42);
        assert!(DriftPolicy::unflatten(k, &[0.0; 41], TR, T).is_err());
        assert!(DriftPolicy::unflatten(PolicyKind::Affine, &[0.0; 42], TR, T).is_err());
    }

    #[test]
    fn tabulated_with_jump() {
        let p = DriftPolicy::Tabulated(
            TabulatedPolicy::new(alloc::vec![
                (0.0, 0.0, 0.1),
                (20.0, 0.2, 0.1),
                (20.0, 0.0, 0.0),
                (50.0, 0.0, 0.3),
            ])
            .unwrap(),
        );
        assert_relative_eq!(p.eval_unchecked(10.0).0, 0.1);
        assert_eq!(p.eval_left(20.0), (0.2, 0.1));
        assert_eq!(p.eval_unchecked(20.0), (0.0, 0.0));
        assert_relative_eq!(p.eval_unchecked(35.0).1, 0.15);
        assert!(TabulatedPolicy::new(alloc::vec![(0.0, -1.0, 0.0), (1.0, 0.0, 0.0)]).is_err());
    }

    fn mlp_strategy() -> impl Strategy<Value = (Vec<f64>, bool)> {
        (prop::collection::vec(-1.0..1.0f64, MLP_PARAMS), any::<bool>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn outputs_nonnegative((params, use_snake) in mlp_strategy(), affine in prop::array::uniform8(-1.0..1.0f64)) {
            let act = if use_snake { Activation::snake() } else { Activation::Relu };
            let m = DriftPolicy::unflatten(PolicyKind::Mlp(act), &params, TR, T).unwrap();
            let a = DriftPolicy::unflatten(PolicyKind::Affine, &affine, TR, T).unwrap();
            for i in 0..=160 {
                let t = T * i as f64 / 160.0;
                for p in [&m, &a] {
                    let (v0, vm) = p.evaluate(t).unwrap();
                    prop_assert!(v0 >= 0.0 && vm >= 0.0);
                }
            }
        }

        #[test]
        fn mlp_continuous((params, use_snake) in mlp_strategy()) {
            let act = if use_snake { Activation::snake() } else { Activation::Relu };
            let m = MlpPolicy::new(&params, act, T).unwrap();
            let n = 20_000;
            let h = T / n as f64;
            let bound = m.lipschitz_bound() * h * (1.0 + 1e-9) + 1e-15;
            let mut prev = m.eval(0.0);
            for i in 1..=n {
                let cur = m.eval(T * i as f64 / n as f64);
                prop_assert!((cur.0 - prev.0).abs() <= bound);
                prop_assert!((cur.1 - prev.1).abs() <= bound);
                prev = cur;
            }
        }

        #[test]
        fn affine_continuous_off_breakpoint(c in prop::array::uniform8(-1.0..1.0f64)) {
            let a = AffinePolicy::new(c, TR, T).unwrap();
            let lip = c.iter().skip(1).step_by(2).fold(0.0f64, |m, x| m.max(x.abs()));
            let n = 1000;
            let h = T / n as f64;
            for i in 0..n {
                let (t0, t1) = (T * i as f64 / n as f64, T * (i + 1) as f64 / n as f64);
                if t0 < TR && t1 >= TR {
                    continue;
                }
                let (x, y) = (a.eval(t0, false), a.eval(t1, false));
                prop_assert!((x.0 - y.0).abs() <= lip * h + 1e-12);
                prop_assert!((x.1 - y.1).abs() <= lip * h + 1e-12);
            }
        }

        #[test]
        fn snake_stays_within_inverse_frequency(x in -100.0..100.0f64, a in 0.01..100.0f64) {
            prop_assert!((snake(x, a).unwrap() - x).abs() <= 1.0 / a + 1e-12 * x.abs());
        }

        #[test]
        fn round_trip(params in prop::collection::vec(-10.0..10.0f64, MLP_PARAMS), c in prop::array::uniform8(-1.0..1.0f64)) {
            let k = PolicyKind::Mlp(Activation::snake());
            prop_assert_eq!(DriftPolicy::unflatten(k, &params, TR, T).unwrap().flatten().unwrap(), params);
            prop_assert_eq!(DriftPolicy::unflatten(PolicyKind::Affine, &c, TR, T).unwrap().flatten().unwrap(), c.to_vec());
        }
    }
}
