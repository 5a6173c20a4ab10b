use thiserror::Error;

use crate::fourier::Frequency;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Hermitian symmetry violated by {residual:.3e} (tolerance {tolerance:.1e})")]
    HermitianViolation { residual: f64, tolerance: f64 },

    #[error("matrix at frequency {freq} is not positive definite: {detail}")]
    NotPositiveDefinite { freq: Frequency, detail: String },

    #[error("singular system at frequency {freq}: {detail}")]
    Singular { freq: Frequency, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty spectrum")]
    EmptySpectrum,

    #[error("target {target:.4e} unreachable: achievable range [{low:.4e}, {high:.4e}]")]
    Unreachable { target: f64, low: f64, high: f64 },
}

impl Error {
    /// Frequency at which a numerical failure occurred, when known.
    pub fn frequency(&self) -> Option<Frequency> {
        match self {
            Error::NotPositiveDefinite { freq, .. } | Error::Singular { freq, .. } => Some(*freq),
            _ => None,
        }
    }

    pub(crate) fn at(self, freq: Frequency) -> Error {
        match self {
            Error::Numerical(detail) => Error::Singular { freq, detail },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
