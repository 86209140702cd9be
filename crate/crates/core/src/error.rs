use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the active fine-tuning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("missing MOS record for image `{0}`")]
    MissingMos(String),

    #[error("missing ratings: {0}")]
    MissingRatings(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("stage precondition violated: {0}")]
    Stage(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable identifier, used by the CLI and the service.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::Empty(_) => "empty_input",
            Error::UnknownImage(_) => "unknown_image",
            Error::MissingMos(_) => "missing_mos",
            Error::MissingRatings(_) => "missing_ratings",
            Error::Degenerate(_) => "degenerate_input",
            Error::Insufficient(_) => "insufficient_data",
            Error::Stage(_) => "stage_precondition",
            Error::Format { .. } => "format",
            Error::Version { .. } => "format_version",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
