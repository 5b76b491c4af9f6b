use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("input shorter than one analysis window ({samples} samples < {window})")]
    TooShort { samples: usize, window: usize },
    #[error("unsupported sample rate {0} Hz (expected 16000 Hz mono)")]
    UnsupportedSampleRate(u32),
    #[error("wav format error in {path}: {reason}")]
    Wav { path: PathBuf, reason: String },
    #[error("filterbank underresolved: mel filter {0} has no nonzero weight")]
    FilterbankUnderresolved(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{op} shape error: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("empty query")]
    EmptyQuery,
    #[error("invalid segment [{onset}, {offset}): {reason}")]
    InvalidSegment { onset: f64, offset: f64, reason: &'static str },
    #[error("dataset error at {path}: {reason}")]
    Dataset { path: String, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn dataset(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Dataset { path: path.into(), reason: reason.into() }
    }
}
