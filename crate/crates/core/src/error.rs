use thiserror::Error;

use crate::baselines::QuantRegDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("invalid cutpoints: {0}")]
    InvalidCutpoints(String),

    #[error("value {value} lies below the support minimum {support_min}")]
    OutOfSupport { value: f64, support_min: f64 },

    #[error("interval set is empty")]
    EmptySet,

    #[error("invalid interval [{lower}, {upper}]")]
    InvalidInterval { lower: f64, upper: f64 },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("bin {bin} has no calibration records")]
    EmptyBin { bin: usize },

    #[error("bin index {bin} out of range for a partition with {n_bins} bins")]
    BinOutOfRange { bin: usize, n_bins: usize },

    #[error("invalid dispersion {0}: must be finite and positive")]
    InvalidDispersion(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("value {value} is outside the domain of the {transform} transform")]
    TransformDomain { transform: &'static str, value: f64 },

    #[error("quantile regression did not converge: {0}")]
    NonConvergence(QuantRegDiagnostics),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("replicate {index} failed")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidCutpoints(_)
            | Error::InvalidParameter { .. }
            | Error::InvalidSplit(_)
            | Error::BinOutOfRange { .. }
            | Error::Io { .. } => ErrorClass::Config,
            Error::DegeneratePartition(_)
            | Error::OutOfSupport { .. }
            | Error::EmptySet
            | Error::InvalidInterval { .. }
            | Error::EmptyCalibration
            | Error::EmptyBin { .. }
            | Error::TransformDomain { .. }
            | Error::Shape(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::InvalidDispersion(_) | Error::SingularDesign | Error::NonConvergence(_) => {
                ErrorClass::Numerical
            }
            Error::Replicate { source, .. } => source.class(),
        }
    }
}
