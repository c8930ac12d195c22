use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(f64),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("label id {id} out of range for {classes} classes")]
    LabelOutOfRange { id: usize, classes: usize },

    #[error("unknown token id {id} (vocabulary size {size})")]
    UnknownToken { id: usize, size: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("activation record is stale (recorded for model version {recorded}, model is at {current})")]
    StaleActivations { recorded: u64, current: u64 },

    #[error("dataset has no answers")]
    Unlabeled,

    #[error("training collapsed at epoch {epoch}: {reason}")]
    Collapsed { epoch: usize, reason: String },

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("missing bundle component {0}")]
    MissingComponent(PathBuf),

    #[error("row count mismatch: {features} feature rows vs {questions} questions")]
    RowCountMismatch { features: usize, questions: usize },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input files.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic(_)
                | Error::VersionMismatch { .. }
                | Error::TruncatedPayload { .. }
                | Error::MissingComponent(_)
                | Error::RowCountMismatch { .. }
                | Error::MalformedRecord { .. }
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
