//! Operational errors of the runner (exit status 1).

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] vhj_core::Error),

    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            reason: e.to_string(),
        }
    }
}
