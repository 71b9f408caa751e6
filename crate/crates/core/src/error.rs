use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("cannot normalize zero {modality} vector")]
    Normalization { modality: &'static str },

    #[error("malformed manifest {path}: line {line}, column {column}: {message}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid manifest field `{field}`: {message}")]
    ManifestField { field: String, message: String },

    #[error("blob size mismatch: expected {expected} bytes, found {actual}")]
    BlobSize { expected: u64, actual: u64 },

    #[error("record `{id}` has non-finite {modality} value at index {index}")]
    NonFiniteRecord {
        id: String,
        modality: &'static str,
        index: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at step {step}: {message} (batch ids: {batch_ids:?})")]
    Training {
        step: usize,
        message: String,
        batch_ids: Vec<String>,
    },

    #[error("no valid negative for anchor of class {class}")]
    NoNegative { class: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("trace does not match parameters: {0}")]
    StaleTrace(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
