use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A primitive received operands whose shapes do not conform.
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("finite-difference oracle failed: non-finite value at coordinate {coordinate}")]
    Oracle { coordinate: usize },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error("split error: {0}")]
    Split(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {loss} loss is not finite")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: &'static str,
    },

    #[error("AUC is undefined: {0}")]
    UndefinedAuc(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("vocabulary mismatch: checkpoint was trained on {expected}, data hashes to {found}")]
    VocabularyMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
