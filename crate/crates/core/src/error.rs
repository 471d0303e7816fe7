use std::path::PathBuf;

use crate::emotion::AlphaVector;

/// Errors produced anywhere in the pipeline library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in emotion vector")]
    NonFinite,
    #[error("emotion vector has no positive mass")]
    AllZero,
    #[error("sequence timestamps are not strictly increasing at frame {index}")]
    NonMonotoneTime { index: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("{function} is undefined at x = {x}")]
    DomainError { function: &'static str, x: f64 },
    #[error("Dirichlet MLE did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        last: AlphaVector,
    },

    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("bad WAV header: {0}")]
    BadHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio too short: {0}")]
    TooShort(String),
    #[error("audio shorter than the analysis window ({duration:.3} s < {window:.3} s)")]
    AudioTooShort { duration: f64, window: f64 },
    #[error("expected {expected} Hz audio, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },

    #[error("checkpoint version {found} is not supported (reader version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("training set is missing emotion class {0}")]
    MissingLabelClass(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("sequence cannot be aligned to the feature grid: {0}")]
    GridMismatch(String),
    #[error("sequences do not overlap in time")]
    NoOverlap,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no usable input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
