use alloc::string::String;

/// Failure modes shared by every module of the solver.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("time {t} outside the admissible range [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("adjustment lies outside the effective domain of the support function")]
    OutsideEffectiveDomain,

    #[error("constraint kind `{0}` is a descriptor only and cannot drive the simulation")]
    UnsupportedConstraint(&'static str),

    #[error("sobol dimension {requested} exceeds the supported maximum {max}")]
    UnsupportedDimension { requested: usize, max: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
