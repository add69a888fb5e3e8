use std::process::ExitCode;

use cavity_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    /// Integration or cycle failure.
    #[error("numerical failure: {0}")]
    Numerical(CoreError),

    /// Extrapolation or fit that did not settle.
    #[error("not converged: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Core(e) => match e {
                CoreError::Divergence { .. } | CoreError::Instability { .. } | CoreError::NonConvergence { .. } => 3,
                CoreError::IllConditioned { .. } => 4,
                _ => 2,
            },
        }
    }

    /// Fit failures that mean the data did not support the model.
    pub fn from_fit(e: CoreError) -> Self {
        match e {
            CoreError::IllConditioned { .. } | CoreError::NonConvergence { .. } | CoreError::InsufficientData(_) => {
                CliError::NotConverged(e.to_string())
            }
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
