use bargewatch_core::augment::AugmentError;
use bargewatch_core::bgsub::BgSubError;
use bargewatch_core::dataset::DatasetError;
use bargewatch_core::detector::DetectorError;
use bargewatch_core::evalsuite::EvalError;
use bargewatch_monitor::MonitorError;
use thiserror::Error;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for usage, validation and config errors.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for runtime and I/O errors.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::InvalidSpec(_) => CliError::Invalid(e.to_string()),
            AugmentError::Dataset(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::InvalidConfig(_) | DetectorError::InvalidArgument(_) | DetectorError::Geometry(_) => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dataset(inner) => inner.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<BgSubError> for CliError {
    fn from(e: BgSubError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Config(_) | MonitorError::InvalidArgument(_) => CliError::Invalid(e.to_string()),
            MonitorError::Detector(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
