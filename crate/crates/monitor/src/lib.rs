//! Live barge-traffic monitoring.
//!
//! Each enabled camera runs its own pipeline on a dedicated thread:
//! sample a frame, detect, classify the scene, debounce scene runs into
//! passage events and append them to a per-camera, per-UTC-day JSONL log.
//! The HTTP layer only reads committed log records and the latest
//! per-camera status snapshot.

use std::path::PathBuf;

use bargewatch_core::detector::DetectorError;
use thiserror::Error;

pub mod aggregate;
pub mod config;
pub mod eventlog;
pub mod events;
pub mod pipeline;
pub mod server;
pub mod source;

pub use aggregate::{aggregate_daily, DailyAggregate};
pub use config::{CameraConfig, DetectorSettings, MonitorConfig, SourceSpec};
pub use eventlog::{read_events, EventLog, FsyncPolicy};
pub use events::{extract_events, EventTracker, FrameObservation, PassageEvent};
pub use pipeline::{CameraState, CameraStatus, Monitor, StatusBoard};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Server(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> MonitorError {
    let path = path.into();
    move |source| MonitorError::Io { path, source }
}
