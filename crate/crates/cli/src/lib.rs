//! Library half of the `ctd` command-line tool: configuration, commands,
//! artifact output and the validation suite.

pub mod commands;
pub mod config;
pub mod output;
pub mod validation;

use ctd_core::error::CtdError;
use thiserror::Error;

pub use commands::{run, Outcome, RunOptions};
pub use config::{CommandKind, ConfigError, ExperimentConfig};

/// Exit code when the acceptance suite reports a failing case.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code for configuration and input errors.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for I/O failures while writing artifacts.
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] CtdError),
    #[error("cannot write artifacts: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_VALIDATION,
            RunError::Engine(e) => e.exit_code(),
            RunError::Io(_) => EXIT_IO,
        }
    }
}
