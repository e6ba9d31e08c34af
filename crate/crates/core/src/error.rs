use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no usable sentence pairs in {0}")]
    EmptyCorpus(PathBuf),

    #[error("no examples could be generated ({skipped} pairs skipped)")]
    EmptyDataset { skipped: usize },

    #[error("cannot generate an example for pair {pair_id}: {reason}")]
    Generation { pair_id: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input encoding failed: {0}")]
    Encoding(String),

    #[error("decoding failed: {0}")]
    Decoding(String),

    #[error("model lacks capability: {0}")]
    Capability(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category, surfaced by the CLI and the service.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyCorpus(_) => "empty_corpus",
            Error::EmptyDataset { .. } => "empty_dataset",
            Error::Generation { .. } => "generation",
            Error::Config(_) => "config",
            Error::Encoding(_) => "encoding",
            Error::Decoding(_) => "decoding",
            Error::Capability(_) => "capability",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Integrity(_) => "integrity",
            Error::Checkpoint(_) => "checkpoint",
            Error::Invalid(_) => "invalid_input",
            Error::Json(_) => "json",
        }
    }
}
