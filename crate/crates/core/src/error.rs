use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible room: Sabine absorption {absorption:.4} >= 1 for RT60 {rt60} s")]
    InfeasibleRoom { rt60: f64, absorption: f64 },
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("degenerate stem: {0}")]
    DegenerateStem(String),
    #[error("scene sampling failed after {attempts} attempts: {reason}")]
    SamplingFailure { attempts: usize, reason: String },
    #[error("beamformer design failed: {0}")]
    Design(String),
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("mini-batch planning infeasible: {batches} batches need {batches} near-target samples, only {available} available (deficit {deficit})")]
    Planning {
        batches: usize,
        available: usize,
        deficit: usize,
    },
    #[error("malformed file {path:?}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("missing mask for scene {scene} (steering index {steering}): {path:?}")]
    MissingMask {
        scene: usize,
        steering: usize,
        path: PathBuf,
    },
    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
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

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
