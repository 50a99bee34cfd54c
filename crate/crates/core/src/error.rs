use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("every grid point diverged during tuning")]
    TuneExhausted,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("malformed tensor file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("truncated tensor file {path}: expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
