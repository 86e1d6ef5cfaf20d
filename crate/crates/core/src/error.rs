use thiserror::Error;

/// Errors raised by the numerical checks and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("field is singular at {point:?}")]
    SingularPoint { point: Vec<f64> },

    #[error("integral failed to converge ({reason})")]
    DivergentIntegral { reason: String },

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("matrix is indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("non-positive ellipticity ratio {ratio:e} at {point:?}")]
    NonPositiveRatio { ratio: f64, point: Vec<f64> },

    #[error("test function has zero weighted energy on the ball")]
    DegenerateTestFunction,

    #[error("batch holds no usable samples at t = {t}")]
    EmptyBatch { t: f64 },

    #[error("state at t = {t} was not recorded by the simulation")]
    NotRecorded { t: f64 },

    #[error("points coincide")]
    CoincidentPoints,

    #[error("unknown custom field id `{0}`")]
    UnknownField(String),

    #[error("value underflows double precision (log value {log_value})")]
    NumericUnderflow { log_value: f64 },

    #[error("{pointer}: {reason}")]
    Schema { pointer: String, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(pointer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            pointer: pointer.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn divergent(reason: impl Into<String>) -> Self {
        Error::DivergentIntegral { reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
