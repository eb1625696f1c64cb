#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod closed_form;
pub mod constraints;
pub mod drift_policy;
pub mod error;
pub mod lower_bound;
pub mod market;
pub mod mortality;
pub mod normal;
pub mod optimizer;
pub mod quadrature;
pub mod sobol;

pub use error::{Error, Result};
