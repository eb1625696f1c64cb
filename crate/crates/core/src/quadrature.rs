//! Trapezoidal quadrature on uniform grids, including the discounted tail
//! integrals `∫_t^T e^{−∫_t^s ρ} f(s) ds` used by every closed-form factor.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    start: f64,
    end: f64,
    intervals: usize,
}

impl UniformGrid {
    pub fn new(start: f64, end: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(invalid("n_intervals", "must be at least 1"));
        }
        if !(start <= end) || !start.is_finite() || !end.is_finite() {
            return Err(invalid("grid", "need finite t_start <= t_end"));
        }
        Ok(Self { start, end, intervals })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.intervals as f64
    }

    /// Node `k`; the last node is exactly `end`.
    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k == self.intervals {
            self.end
        } else {
            self.start + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.intervals).map(move |k| self.node(k))
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes().map(f).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.intervals + 1 {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.intervals + 1,
                got: len,
            })
        }
    }
}

pub fn trapezoid(values: &[f64], grid: &UniformGrid) -> Result<f64> {
    grid.check_len(values.len())?;
    let n = grid.intervals;
    let inner: f64 = values[1..n].iter().sum();
    Ok(grid.step() * (0.5 * (values[0] + values[n]) + inner))
}

/// Running trapezoid `∫_{t_0}^{t_k}` for every node `k`.
pub fn cumulative_trapezoid(values: &[f64], grid: &UniformGrid) -> Result<Vec<f64>> {
    grid.check_len(values.len())?;
    let half = 0.5 * grid.step();
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(acc);
    for w in values.windows(2) {
        acc += half * (w[0] + w[1]);
        out.push(acc);
    }
    Ok(out)
}

/// Tail integrals `I_k = ∫_{t_k}^{t_n} e^{−(P(s)−P(t_k))} f(s) ds + e^{−(P(t_n)−P(t_k))}·terminal`
/// on one uniform segment.
///
/// `decay[k] = P(t_{k+1}) − P(t_k)` for each interval. The outer integral is the
/// trapezoid rule on the grid, which makes
/// `I_k = e^{−decay_k}·I_{k+1} + h/2·(f_k + e^{−decay_k} f_{k+1})`.
pub fn discounted_tail(h: f64, decay: &[f64], f: &[f64], terminal: f64) -> Result<Vec<f64>> {
    if f.len() != decay.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: decay.len() + 1,
            got: f.len(),
        });
    }
    let n = decay.len();
    let mut out = vec![0.0; n + 1];
    out[n] = terminal;
    let half = 0.5 * h;
    for k in (0..n).rev() {
        let d = (-decay[k]).exp();
        out[k] = d * out[k + 1] + half * (f[k] + d * f[k + 1]);
    }
    Ok(out)
}

/// `∫_{t_0}^{t_n} base(s)·exp(−exact(t_0, s) − ∫_{t_0}^s rate(u) du) ds`.
///
/// `exact` is an exponent known in closed form (such as a Gompertz cumulative
/// hazard); `rate` is integrated by the trapezoid rule on the same grid.
pub fn nested_trapezoid(
    grid: &UniformGrid,
    base: impl Fn(f64) -> f64,
    rate: impl Fn(f64) -> f64,
    exact: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    let nodes: Vec<f64> = grid.nodes().collect();
    let rates: Vec<f64> = nodes.iter().map(|&t| rate(t)).collect();
    let h = grid.step();
    let decay: Vec<f64> = (0..grid.intervals)
        .map(|k| exact(nodes[k], nodes[k + 1]) + 0.5 * h * (rates[k] + rates[k + 1]))
        .collect();
    let f: Vec<f64> = nodes.iter().map(|&t| base(t)).collect();
    let tail = discounted_tail(h, &decay, &f, 0.0)?;
    let value = tail[0];
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("nested trapezoid".into()))
    }
}
