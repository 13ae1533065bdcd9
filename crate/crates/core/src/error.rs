//! Error type shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AmtError {
    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("unsupported encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },

    #[error("audio stream contains no samples")]
    EmptyAudio,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("input has no non-silent frames")]
    AllSilent,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no training data provided")]
    EmptyTraining,

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("no matching reference for {0}")]
    MissingPair(String),

    #[error("template bank does not match frontend configuration: {0}")]
    BankMismatch(String),

    #[error("train/test split leakage: {0}")]
    SplitLeakage(String),

    #[error("note library directory is empty")]
    EmptyLibrary,

    #[error("state {0} is not in the model inventory")]
    ModelStateMismatch(usize),
}

pub type Result<T> = std::result::Result<T, AmtError>;
