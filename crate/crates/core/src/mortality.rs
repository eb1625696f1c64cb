//! Gompertz law of mortality.
//!
//! The force of mortality at age `x + t` is `(1/b) exp((x + t - m) / b)`,
//! where `m` is the modal age at death and `b` the dispersion. The
//! cumulative hazard integrates in closed form, so survival probabilities
//! never need numerical quadrature.

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MortalityModel {
    initial_age: f64,
    modal_age: f64,
    dispersion: f64,
}

impl Default for MortalityModel {
    fn default() -> Self {
        Self {
            initial_age: 45.0,
            modal_age: 86.3,
            dispersion: 9.5,
        }
    }
}

impl MortalityModel {
    pub fn new(initial_age: f64, modal_age: f64, dispersion: f64) -> Result<Self> {
        if !(dispersion > 0.0) || !dispersion.is_finite() {
            return Err(invalid("dispersion", "must be positive and finite"));
        }
        if !(initial_age >= 0.0) || !initial_age.is_finite() {
            return Err(invalid("initial_age", "must be nonnegative and finite"));
        }
        if !modal_age.is_finite() {
            return Err(invalid("modal_age", "must be finite"));
        }
        Ok(Self {
            initial_age,
            modal_age,
            dispersion,
        })
    }

    pub fn initial_age(&self) -> f64 {
        self.initial_age
    }

    pub fn modal_age(&self) -> f64 {
        self.modal_age
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// `exp((x + t - m) / b)`; the building block of both the hazard and its integral.
    #[inline]
    fn scaled(&self, t: f64) -> f64 {
        ((self.initial_age + t - self.modal_age) / self.dispersion).exp()
    }

    /// Unchecked hazard for hot loops where `t >= 0` is guaranteed by the caller.
    #[inline]
    pub(crate) fn hazard_unchecked(&self, t: f64) -> f64 {
        self.scaled(t) / self.dispersion
    }

    #[inline]
    pub(crate) fn cumulative_hazard_unchecked(&self, t1: f64, t2: f64) -> f64 {
        self.scaled(t2) - self.scaled(t1)
    }

    /// Force of mortality `λ_{x+t}`.
    pub fn hazard(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.hazard_unchecked(t))
    }

    /// Probability `tpx` of surviving from age `x` to age `x + t`.
    pub fn survival(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok((-self.cumulative_hazard_unchecked(0.0, t)).exp())
    }

    /// Probability `tqx` of dying before age `x + t`.
    pub fn death_probability(&self, t: f64) -> Result<f64> {
        Ok(1.0 - self.survival(t)?)
    }

    /// Density of the remaining lifetime, `tpx · λ_{x+t}`.
    pub fn density(&self, t: f64) -> Result<f64> {
        Ok(self.survival(t)? * self.hazard_unchecked(t))
    }

    /// `∫_{t1}^{t2} λ_{x+s} ds`.
    pub fn cumulative_hazard(&self, t1: f64, t2: f64) -> Result<f64> {
        check_time(t1)?;
        if !(t2 >= t1) {
            return Err(invalid("t2", "must not precede t1"));
        }
        Ok(self.cumulative_hazard_unchecked(t1, t2))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid("t", "must be a finite nonnegative time"))
    }
}
