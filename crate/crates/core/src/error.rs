use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the compute core and the storage layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("invalid timestep order: t={t}, t_prev={t_prev}")]
    TimestepOrder { t: usize, t_prev: usize },

    #[error("sigma^2 = {sigma_sq} exceeds 1 - alpha_bar_prev = {limit}")]
    SigmaTooLarge { sigma_sq: f64, limit: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("missing classifier for guided sampling")]
    MissingClassifier,

    #[error("missing labels for conditional sampling")]
    MissingLabels,

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("checkpoint kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("checkpoint inconsistent: {0}")]
    InconsistentCheckpoint(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Csv { path: String, line: u64, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category for command-line error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } | Error::LabelOutOfRange { .. } | Error::TooFewPoints { .. } => "shape",
            Error::TimestepOutOfRange { .. } | Error::TimestepOrder { .. } | Error::SigmaTooLarge { .. } | Error::InvalidSchedule(_) => {
                "schedule"
            }
            Error::EmptyDataset | Error::EmptyBatch | Error::DegenerateCovariance(_) => "data",
            Error::InvalidArgument(_) => "argument",
            Error::MissingClassifier | Error::MissingLabels => "guidance",
            Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::PayloadLength { .. }
            | Error::KindMismatch { .. }
            | Error::InconsistentCheckpoint(_) => "checkpoint",
            Error::Config { .. } => "config",
            Error::Csv { .. } => "csv",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
