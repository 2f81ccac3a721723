use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing weights for tensor `{0}`")]
    MissingWeights(String),

    #[error("graph structure error: {0}")]
    Structure(String),

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("no activation range recorded for `{0}`")]
    RangeMissing(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("covariance matrix is singular even after regularization")]
    SingularCovariance,

    #[error("rank deficient: only {found} of {requested} bands are linearly independent")]
    RankDeficient { requested: usize, found: usize },

    #[error("configurations produced different outputs: {0}")]
    NonDeterministicOutput(String),

    #[error("corrupt container {path}: {reason}")]
    CorruptContainer { path: PathBuf, reason: String },

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptContainer { path: path.into(), reason: reason.into() }
    }

    /// True for errors caused by bad input data rather than by a bug or an
    /// internal consistency failure.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NonDeterministicOutput(_) | Error::Structure(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
