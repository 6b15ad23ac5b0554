use std::path::PathBuf;

use bimg_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {msg}")]
    Parse { path: PathBuf, row: usize, msg: String },
    #[error("validation: {0}")]
    Validation(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("placement: {0}")]
    Placement(String),
    #[error("no valid placement found after {attempts} attempts")]
    PlacementExhausted { attempts: usize },
    #[error("lookup: {0}")]
    Lookup(String),
    #[error("empty set: {0}")]
    EmptySet(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite value in {component} at step {step}")]
    NonFinite { component: String, step: u64 },
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the error stems from invalid user-supplied settings or inputs,
    /// as opposed to a failure while running.
    pub fn is_configuration(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Validation(_) | Error::Parse { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
