//! Experiment harness around `cpcf-core`: configuration, dataset files, CSV
//! run logs, checkpoints, SVG plots and the `cpcf` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csv;
pub mod datasets;
pub mod plot;

use std::path::Path;

use cpcf_core::CoreError;
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NumericalAbort { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
