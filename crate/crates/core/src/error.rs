use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("signal metadata error: {0}")]
    Metadata(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("could not parse arbiter verdict: {0}")]
    Parse(String),

    #[error("arbiter unavailable: {0}")]
    ArbiterUnavailable(String),

    #[error("calibration fit error: {0}")]
    Fit(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("test-split leakage: {0}")]
    Leakage(String),

    #[error("missing input {path}: {reason}")]
    MissingInput { path: PathBuf, reason: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn missing(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MissingInput {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
