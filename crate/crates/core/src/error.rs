use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("clip duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("video {0} has no transition annotation")]
    MissingAnnotation(String),
    #[error("video {id} is too short: {reason}")]
    VideoTooShort { id: String, reason: String },
    #[error("horizon {horizon} s is not an integer multiple of stride {stride} s")]
    HorizonNotMultipleOfStride { horizon: f64, stride: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("negative set is empty")]
    EmptyNegativeSet,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("pair members share clip index {0}")]
    DegenerateIndices(usize),
    #[error("class {0} is absent from the labeled clips")]
    MissingClass(&'static str),
    #[error("no valid anticipation pairs")]
    NoValidPairs,
    #[error("dataset not found at {0}")]
    DatasetNotFound(PathBuf),
    #[error("checkpoint not found at {0}")]
    CheckpointNotFound(PathBuf),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("no metrics found under {0}")]
    NoMetricsFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
