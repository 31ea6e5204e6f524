//! Error type shared by every module.
//!
//! Three families of failure matter to callers:
//!
//! - **Domain** errors: an input is outside the set where the formula is
//!   defined (a zero coordinate under a logarithm, a floor above `1/S`, ...).
//! - **Refused** requests: the input is well-formed but the guarantee the
//!   operation relies on is not available (a slope condition fails, the
//!   barrier strength is zero, ...). The solver declines rather than return
//!   a number it cannot certify.
//! - **Config** errors: a study description is malformed. The command-line
//!   front end maps these to exit code 2.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of the named operation.
    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },

    /// The operation's precondition (a slope or strength condition) fails.
    #[error("{op}: refused: {msg}")]
    Refused { op: &'static str, msg: String },

    /// Kernel matrix is not symmetric positive semi-definite.
    #[error("kernel is not PSD: {0}")]
    NotPsd(String),

    /// Malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Iterative procedure did not reach its tolerance.
    #[error("{op}: no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn refused(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Refused {
            op,
            msg: msg.into(),
        }
    }

    /// True for errors caused by the user's configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
