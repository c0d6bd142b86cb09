use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lands behind the camera (z = {z:e})")]
    BehindCamera { z: f64 },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix")]
    InvalidRotation,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("degenerate size {width}x{height}: both sides must be at least 2")]
    DegenerateSize { width: usize, height: usize },
    #[error("missing input for this conditioning kind: {0}")]
    MissingInput(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate point configuration for pose estimation")]
    DegenerateConfiguration,
    #[error("pose refinement did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("consensus set too small: {found} inliers, need at least {needed}")]
    InsufficientInliers { found: usize, needed: usize },
    #[error("no valid depth at match {index}")]
    InvalidDepthAtMatch { index: usize },
    #[error("sequence of {len} frames is too short for minimum interval {min_interval}")]
    SequenceTooShort { len: usize, min_interval: usize },
    #[error("record {0} has no depth confidence")]
    MissingConfidence(usize),
    #[error("malformed dataset layout: {0}")]
    MalformedLayout(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
