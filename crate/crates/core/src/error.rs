use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and the analytics pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon `{id}`: {reason}")]
    InvalidPolygon { id: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("node `{node}`: time goes backwards at t={time_s}")]
    NonMonotonicTime { node: String, time_s: f64 },

    #[error("time {time_s} s is not on the {tick_s} s tick grid")]
    OffGrid { time_s: f64, tick_s: f64 },

    #[error("time {time_s} s is outside the scenario [0, {duration_s}] s")]
    OutOfRange { time_s: f64, duration_s: f64 },

    #[error("scenario capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("bin mismatch: {0}")]
    BinMismatch(String),

    #[error("sweep cell power={power_dbm} dBm rate={rate_hz} Hz failed: {source}")]
    SweepCell {
        power_dbm: f64,
        rate_hz: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
