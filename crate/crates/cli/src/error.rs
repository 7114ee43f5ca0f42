use std::path::PathBuf;

use esn_core::EsnError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] EsnError),

    #[error("{path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn checkpoint(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CliError::Checkpoint {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short category printed in the error line.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e {
                EsnError::InvalidArgument(_) | EsnError::Initialization(_) => "config",
                EsnError::Vocabulary { .. }
                | EsnError::MalformedLine { .. }
                | EsnError::CorpusIntegrity(_)
                | EsnError::Format { .. } => "data",
                EsnError::NonFiniteGradient { .. } | EsnError::NonFiniteLoss { .. } => "numeric",
                EsnError::Io { .. } => "io",
            },
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Checkpoint { .. } => "checkpoint",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "config" => 3,
            "data" => 4,
            "checkpoint" => 5,
            "numeric" => 6,
            _ => 1,
        }
    }
}
