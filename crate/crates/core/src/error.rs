use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fitting and feature pipeline.
#[derive(Debug, Error)]
pub enum MemgError {
    #[error("degenerate spread: |sigma| = {0:e} ms is below the evaluation floor")]
    DegenerateSpread(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model has no components")]
    EmptyModel,
    #[error("parameter mask selects no free parameters")]
    NoFreeParameters,
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("singular normal equations")]
    SingularSystem,
    #[error("non-finite loss at the starting point")]
    InvalidStart,
    #[error("frame has no dominant frequency (all-zero spectrum)")]
    NoDominantFrequency,
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("need at least 2 positive envelope peaks for a gain fit, found {0}")]
    InsufficientPeaks(usize),
    #[error("no envelope gradient exceeds the threshold tau = {0}")]
    NoComponents(f64),
    #[error("confidence undefined: {0}")]
    UndefinedConfidence(String),
    #[error("confidence window for component {0} is empty after clipping")]
    EmptyWindow(usize),
    #[error("feature column '{0}' has zero spread")]
    DegenerateFeature(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("training set needs at least two classes")]
    DegenerateTraining,
    #[error("undefined recall: no positive samples in ground truth")]
    UndefinedRecall,
    #[error("component frequency {freq} kHz aliases at sampling rate {fs} kHz")]
    Aliasing { freq: f64, fs: f64 },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("schema version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl MemgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MemgError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        MemgError::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MemgError>;
