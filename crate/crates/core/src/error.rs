use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("profile resolution too coarse: {empty} of {bins} bins received no pixels")]
    ProfileResolution { empty: usize, bins: usize },

    #[error("estimated object region collapsed (area {area:.3} px)")]
    DegenerateRegion { area: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that indicate an optimization could not proceed
    /// (as opposed to malformed input).
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateRegion { .. } | Error::NonFinite(_) | Error::DegenerateShape(_)
        )
    }
}
