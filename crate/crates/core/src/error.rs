use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("{0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (loss is {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("layer `{layer}`: {reason}")]
    Layer { layer: String, reason: String },

    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    IdxMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated IDX file ({actual} bytes, header requires {expected})")]
    IdxTruncated { path: PathBuf, actual: usize, expected: usize },

    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u16, expected: u16 },

    #[error("checkpoint kind mismatch: file holds {found}, expected {expected}")]
    CheckpointKind { found: String, expected: String },

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

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
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        Error::Shape {
            op,
            shapes: shapes.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
