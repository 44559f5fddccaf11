use thiserror::Error;

/// Errors raised by the pricing, simulation and hedging routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtdError {
    /// Malformed inputs: bad parameters, inconsistent dimensions, unknown keys.
    #[error("validation error: {0}")]
    Validation(String),

    /// A time lies outside the interval covered by a curve or grid.
    #[error("time {t} outside domain [{start}, {end}]")]
    Domain { t: f64, start: f64, end: f64 },

    /// A computation degenerated numerically (cancellation, non-convergence, factorization failure).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CtdError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CtdError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CtdError::Numerical(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CtdError::Validation(_) | CtdError::Domain { .. } => 2,
            CtdError::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CtdError>;
