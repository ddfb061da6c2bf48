use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The entry kernel is not strictly decreasing, so the timing reduction
    /// does not apply.
    #[error("entry kernel not strictly decreasing near t = {t}")]
    MonotonicityViolation { t: f64 },

    /// The outer residual did not change sign on the scan.
    #[error("no sign change of the exit-mass residual on the c-scan ({} points)", scan.len())]
    NoBracket { scan: Vec<(f64, f64)> },

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
