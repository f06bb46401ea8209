use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("response column `{0}` not found in header")]
    MissingColumn(String),

    #[error("no usable rows after dropping {dropped} incomplete rows")]
    NoUsableRows { dropped: usize },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot fit a tree to an empty sample")]
    EmptySample,

    #[error("covariance of the difference vector is singular at test points {points:?}")]
    SingularCovariance { points: Vec<usize> },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::UnknownFeature(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidParameter(_)
                | Error::Unsupported(_)
        )
    }
}
