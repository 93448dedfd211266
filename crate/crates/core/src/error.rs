//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by grid construction, assembly, solvers and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a precondition (bad interval, inadmissible exponent, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An assembled stiffness entry came out non-finite.
    #[error("quadrature failure at entry ({row}, {col}): value {value}")]
    Quadrature { row: usize, col: usize, value: f64 },

    /// A linear system could not be factorized.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// Input data contained NaN or infinity.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// An iterative method hit its iteration cap or stagnated.
    #[error("{method} did not converge after {iterations} iterations: {detail}")]
    Convergence {
        method: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config encode error: {0}")]
    ConfigEncode(#[from] toml::ser::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for errors that a caller should treat as rejected input (CLI exit code 2).
    pub fn is_parameter(&self) -> bool {
        matches!(self, Error::Parameter(_) | Error::NonFinite(_) | Error::ConfigParse(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
