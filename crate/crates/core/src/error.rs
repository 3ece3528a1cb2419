use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),

    #[error("scene {scene_index}: no non-empty referent set after {attempts} attempts")]
    GenerationRetryExhausted { scene_index: u64, attempts: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (samples: {})", sample_ids.join(", "))]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        sample_ids: Vec<String>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
