use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },

    #[error("non-finite value produced by layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("snapshot does not match spec at `{name}`: {detail}")]
    SnapshotMismatch { name: String, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("symbolic expansion budget exceeded: estimated {estimate} terms (limit {limit}); {detail}")]
    BudgetExceeded {
        estimate: u128,
        limit: u128,
        detail: String,
    },

    #[error("point is not on the system: residual {residual:e}")]
    NotOnSystem { residual: f64 },

    #[error("undefined dissimilarity between items {0} and {1}")]
    UndefinedDissimilarity(usize, usize),

    #[error("parse error in {path} at byte offset {offset}: {detail}")]
    Parse {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("bad snapshot magic in {0}")]
    BadMagic(PathBuf),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
