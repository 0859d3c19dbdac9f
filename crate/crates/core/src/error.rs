use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed npy data: {0}")]
    Npy(String),

    #[error("malformed csv data: {0}")]
    Csv(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("label out of range: {label} >= {classes}")]
    LabelOutOfRange { label: i64, classes: usize },

    #[error("labels are required but absent")]
    MissingLabels,

    #[error("logits are required but neither logits nor a classifier head were supplied")]
    MissingLogits,

    #[error("a classifier head is required for this operation")]
    MissingHead,

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular value decomposition did not converge")]
    SvdNonConvergence,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
