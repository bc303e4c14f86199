use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward already run on this computation record")]
    GraphConsumed,
    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed data in {file}: {msg}")]
    Format { file: String, msg: String },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("missing rate {mr} outside (0, {max}] for {modalities} modalities")]
    MissingRate { mr: f64, max: f64, modalities: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
