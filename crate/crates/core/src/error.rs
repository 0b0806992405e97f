use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion: norm {0:e} is too small to normalize")]
    DegenerateQuaternion(f64),

    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient points: need {needed}, have {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("point sets have unequal sizes ({left} vs {right})")]
    UnequalSize { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("shape {shape} could not satisfy the crop constraints within {attempts} attempts")]
    Ungeneratable { shape: String, attempts: usize },

    #[error("no pair with overlap in [{lo:.4}, {hi:.4}] within {attempts} attempts")]
    UngeneratableOverlap { lo: f64, hi: f64, attempts: usize },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error("checkpoint schema error: {0}")]
    Schema(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
