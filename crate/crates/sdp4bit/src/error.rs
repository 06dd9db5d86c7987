use std::io;

use sdp4bit_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("run diverged at iteration {iter}")]
    Diverged { iter: u64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Diverged { .. } => 3,
            _ => 1,
        }
    }

    /// Short tag for the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(_) => "invalid",
            CliError::Io { .. } => "io",
            CliError::Csv(_) => "csv",
            CliError::Diverged { .. } => "diverged",
        }
    }

    pub(crate) fn io(path: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
