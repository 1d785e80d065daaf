//! Experiment harness for the AoII solver: configuration, commands and
//! output formatting behind the `aoii` binary.

pub mod commands;
pub mod config;
pub mod format;

use aoii_core::AoiiError;
use thiserror::Error;

pub use commands::{execute, run, Command, Outcome, Overrides};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(AoiiError),
    #[error("validation failed: {0} check(s) did not pass")]
    Validation(usize),
    #[error("cannot write output: {0}")]
    Io(String),
}

impl From<AoiiError> for CliError {
    fn from(e: AoiiError) -> Self {
        match e {
            AoiiError::InvalidParameter { .. } | AoiiError::InvalidState { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}
