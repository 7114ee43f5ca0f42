use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EsnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EsnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reservoir initialization failed: {0}")]
    Initialization(String),

    #[error("{path}:{line}: token id {id} is out of range for vocabulary size {vocab_size}")]
    Vocabulary {
        path: PathBuf,
        line: usize,
        id: u64,
        vocab_size: usize,
    },

    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },

    #[error("corpus integrity: {0}")]
    CorpusIntegrity(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("non-finite gradient in `{tensor}`; optimizer step aborted")]
    NonFiniteGradient { tensor: &'static str },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EsnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EsnError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EsnError::Io {
            path: path.into(),
            source,
        }
    }
}
