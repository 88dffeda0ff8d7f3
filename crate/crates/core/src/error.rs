use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("batchnorm running statistics were never updated; run a train-mode pass or load a trained model")]
    UntrackedBatchNorm,

    #[error("empty batch: no labeled pixels")]
    EmptyBatch,

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("no sample tiles available for class {0}")]
    EmptyClass(String),

    #[error("overlap {given} is too small for this network; minimum required overlap is {required}")]
    OverlapTooSmall { given: usize, required: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u16, supported: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("model config mismatch: field `{field}` expected {expected}, found {found}")]
    ConfigMismatch {
        field: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("raster grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate ring: {0}")]
    DegenerateRing(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Invalid(_) => "invalid",
            Error::UntrackedBatchNorm => "untracked_batchnorm",
            Error::EmptyBatch => "empty_batch",
            Error::NonFinite { .. } => "non_finite",
            Error::EmptyClass(_) => "empty_class",
            Error::OverlapTooSmall { .. } => "overlap_too_small",
            Error::BadMagic { .. } => "bad_magic",
            Error::Version { .. } => "version",
            Error::Truncated(_) => "truncated",
            Error::ConfigMismatch { .. } => "config_mismatch",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::DegenerateRing(_) => "degenerate_ring",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
