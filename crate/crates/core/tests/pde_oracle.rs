//! Retirement-phase value from a direct finite-difference solve of its HJB
//! equation, compared with the quadrature-based closed form.
//!
//! The oracle works on `x = ln W`, steps backward from the horizon with Heun's
//! method and gets `g` from an RK4 solve of `g' = ρ g − 1`. It shares only the
//! mortality model and market curves with the library.

use dualbound_core::closed_form::upper_bound_retirement;
use dualbound_core::constraints::ConstraintSpec;
use dualbound_core::drift_policy::{AffinePolicy, DriftPolicy};
use dualbound_core::market::MarketScenario;

struct Oracle<'a> {
    s: &'a MarketScenario,
    v_minus: fn(f64) -> f64,
}

impl Oracle<'_> {
    fn kappa(&self, t: f64, vm: f64) -> f64 {
        -(self.s.drift.eval(t) + vm - self.s.rate.eval(t)) / self.s.volatility.eval(t)
    }

    fn g_rhs(&self, t: f64, g: f64) -> f64 {
        let gamma = self.s.gamma();
        let k = self.kappa(t, 0.0);
        let rho = self.s.preferences.discount_rate / gamma
            + (gamma - 1.0) / gamma * self.s.rate.eval(t)
            + 0.5 * (gamma - 1.0) / (gamma * gamma) * k * k;
        rho * g - 1.0
    }

    /// `g` on `t_k = T − k·dt`, k = 0..=2n (half steps included for Heun stages).
    fn g_table(&self, dt: f64, n: usize) -> Vec<f64> {
        let h = dt / 2.0;
        let mut out = vec![1.0];
        let mut g = 1.0;
        let mut t = self.s.horizon;
        for _ in 0..2 * n {
            // backward in time: dg/dτ = −g'(t)
            let f = |t: f64, g: f64| -self.g_rhs(t, g);
            let k1 = f(t, g);
            let k2 = f(t - h / 2.0, g + h / 2.0 * k1);
            let k3 = f(t - h / 2.0, g + h / 2.0 * k2);
            let k4 = f(t - h, g + h * k3);
            g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t -= h;
            out.push(g);
        }
        out
    }

    /// `∂u/∂τ` with `τ = T − t` for `u(x) = V(t, e^x)`.
    fn rhs(&self, t: f64, g: f64, u: &[f64], dx: f64, out: &mut [f64]) {
        let gamma = self.s.gamma();
        let m = &self.s.mortality;
        let lam = m.hazard(t).unwrap();
        let r = self.s.rate.eval(t);
        let k = self.kappa(t, (self.v_minus)(t));
        let delta = self.s.preferences.discount_rate;
        let x0 = WMIN.ln();
        for i in 1..u.len() - 1 {
            let ux = (u[i + 1] - u[i - 1]) / (2.0 * dx);
            let uxx = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
            let w = (x0 + i as f64 * dx).exp();
            let vw = ux / w;
            let ut = (lam + delta) * u[i] - (r + lam) * ux + 0.5 * k * k * ux * ux / (uxx - ux)
                - (1.0 + lam * g) * gamma / (1.0 - gamma) * vw.powf((gamma - 1.0) / gamma);
            out[i] = -ut;
        }
    }

    fn close(&self, u: &mut [f64], dx: f64) {
        // homogeneity of degree 1 − γ fixes the ends
        let a = 1.0 - self.s.gamma();
        let n = u.len();
        u[0] = u[1] * (-a * dx).exp();
        u[n - 1] = u[n - 2] * (a * dx).exp();
    }

    fn solve(&self, t_stop: f64, nx: usize, dt: f64) -> (Vec<f64>, f64) {
        let gamma = self.s.gamma();
        let (x0, x1) = (WMIN.ln(), WMAX.ln());
        let dx = (x1 - x0) / nx as f64;
        let steps = ((self.s.horizon - t_stop) / dt).round() as usize;
        let g = self.g_table(dt, steps);
        let mut u: Vec<f64> = (0..=nx)
            .map(|i| ((1.0 - gamma) * (x0 + i as f64 * dx)).exp() / (1.0 - gamma))
            .collect();
        let mut k1 = vec![0.0; u.len()];
        let mut k2 = vec![0.0; u.len()];
        let mut trial = u.clone();
        for n in 0..steps {
            let t = self.s.horizon - n as f64 * dt;
            self.rhs(t, g[2 * n], &u, dx, &mut k1);
            for i in 1..u.len() - 1 {
                trial[i] = u[i] + dt * k1[i];
            }
            self.close(&mut trial, dx);
            self.rhs(t - dt, g[2 * n + 2], &trial, dx, &mut k2);
            for i in 1..u.len() - 1 {
                u[i] += 0.5 * dt * (k1[i] + k2[i]);
            }
            self.close(&mut u, dx);
        }
        (u, dx)
    }

    fn value(&self, t: f64, w: f64) -> f64 {
        let (u, dx) = self.solve(t, 600, 2e-3);
        let pos = (w.ln() - WMIN.ln()) / dx;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        u[i] * (1.0 - f) + u[i + 1] * f
    }
}

const WMIN: f64 = 1.0;
const WMAX: f64 = 1e5;

fn check(s: &MarketScenario, policy: &DriftPolicy, v_minus: fn(f64) -> f64) {
    let oracle = Oracle { s, v_minus };
    let c = ConstraintSpec::no_borrowing_no_shorting();
    for (t, w) in [(25.0, 150.0), (40.0, 800.0)] {
        let closed = upper_bound_retirement(s, &c, policy, t, w, 4000).unwrap().value;
        let fd = oracle.value(t, w);
        assert!((fd / closed - 1.0).abs() < 1e-3, "t={t} w={w}: fd {fd} closed {closed}");
    }
}

#[test]
fn retirement_value_matches_pde_solution_without_adjustment() {
    let s = MarketScenario::example1();
    check(&s, &DriftPolicy::zero(s.retirement, s.horizon).unwrap(), |_| 0.0);
}

#[test]
fn retirement_value_matches_pde_solution_with_adjustment() {
    let s = MarketScenario::example2();
    // v0 = 0 keeps the support term at zero for the long-only box
    let coeffs = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.01, 0.0002];
    let p = DriftPolicy::Affine(AffinePolicy::new(coeffs, s.retirement, s.horizon).unwrap());
    check(&s, &p, |t| 0.01 + 0.0002 * t);
}
