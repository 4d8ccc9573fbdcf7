//! Monitor configuration file.
//!
//! ```toml
//! log_dir = "events"
//!
//! [server]
//! bind = "127.0.0.1"
//! port = 8080
//! # bearer_token = "secret"
//!
//! [monitor]
//! min_consecutive = 2
//! gap_tolerance = 1
//! fsync = "always"
//!
//! [detectors.default]
//! backend = "onnx"
//! model_path = "models/barges.onnx"
//! input_size = 1216
//!
//! [detectors.replay]
//! backend = "stub"
//! fixture = "fixtures/predictions.json"
//!
//! [[cameras]]
//! id = "erb"
//! source = { snapshot = "http://camera.example/snapshot.jpg" }
//! poll_interval_seconds = 5.0
//!
//! [[cameras]]
//! id = "ccb-replay"
//! source = { directory = "frames/ccb" }
//! detector = "replay"
//! start = "2024-05-01T12:00:00Z"
//! ```
//!
//! Relative paths resolve against the config file's directory. The
//! environment variables `BARGEWATCH_BIND`, `BARGEWATCH_PORT` and
//! `BARGEWATCH_LOG_DIR` override the file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use bargewatch_core::detector::DetectorConfig;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::eventlog::FsyncPolicy;
use crate::{io_err, MonitorError};

pub const ENV_BIND: &str = "BARGEWATCH_BIND";
pub const ENV_PORT: &str = "BARGEWATCH_PORT";
pub const ENV_LOG_DIR: &str = "BARGEWATCH_LOG_DIR";

pub const DEFAULT_DETECTOR: &str = "default";

fn default_poll() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}
fn default_detector() -> String {
    DEFAULT_DETECTOR.into()
}
fn default_log_dir() -> PathBuf {
    PathBuf::from("events")
}

/// Where a camera's frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// HTTP(S) URL returning one still image per request, polled live.
    Snapshot(String),
    /// Animated GIF replayed at the poll interval.
    Video(PathBuf),
    /// Directory of images replayed in lexicographic file-name order.
    Directory(PathBuf),
}

impl SourceSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SourceSpec::Snapshot(_) => "snapshot",
            SourceSpec::Video(_) => "video",
            SourceSpec::Directory(_) => "directory",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            SourceSpec::Snapshot(url) => format!("snapshot {url}"),
            SourceSpec::Video(p) => format!("video {}", p.display()),
            SourceSpec::Directory(p) => format!("directory {}", p.display()),
        }
    }

    pub fn is_replay(&self) -> bool {
        !matches!(self, SourceSpec::Snapshot(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub id: String,
    pub source: SourceSpec,
    #[serde(default = "default_poll")]
    pub poll_interval_seconds: f64,
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Key into `[detectors]`.
    #[serde(default = "default_detector")]
    pub detector: String,
    /// Timestamp of the first replayed frame. Replay sources fall back to
    /// the wall clock at start-up, which makes their logs run-dependent.
    #[serde(default)]
    pub start: Option<DateTime<Utc>>,
}

/// Detector a camera runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum DetectorSettings {
    /// Replays a prediction fixture keyed by frame id.
    Stub { fixture: PathBuf },
    Onnx(DetectorConfig),
}

impl DetectorSettings {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorSettings::Stub { .. } => "stub",
            DetectorSettings::Onnx(_) => "onnx",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySettings {
    /// Retries after the first failed fetch of one poll.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_seconds: f64,
}

impl Default for RetrySettings {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            timeout_seconds: 10.0,
        }
    }
}

impl RetrySettings {
    /// Delay before retry `attempt` (0-based): base * 2^attempt, capped.
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub min_consecutive: usize,
    pub gap_tolerance: usize,
    pub fsync: FsyncPolicy,
    pub snapshot_retry: RetrySettings,
    /// A camera is fresh while its last frame is younger than this many
    /// poll intervals.
    pub freshness_intervals: f64,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        Self {
            min_consecutive: 2,
            gap_tolerance: 1,
            fsync: FsyncPolicy::default(),
            snapshot_retry: RetrySettings::default(),
            freshness_intervals: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub bind: String,
    pub port: u16,
    pub bearer_token: Option<String>,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            bearer_token: None,
        }
    }
}

impl ServerSettings {
    pub fn address(&self) -> String {
        if self.bind.contains(':') && !self.bind.starts_with('[') {
            format!("[{}]:{}", self.bind, self.port)
        } else {
            format!("{}:{}", self.bind, self.port)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    #[serde(default)]
    pub cameras: Vec<CameraConfig>,
    #[serde(default)]
    pub detectors: BTreeMap<String, DetectorSettings>,
    #[serde(default)]
    pub monitor: MonitorSettings,
    #[serde(default)]
    pub server: ServerSettings,
    #[serde(default = "default_log_dir")]
    pub log_dir: PathBuf,
}

impl MonitorConfig {
    pub fn from_toml(text: &str) -> Result<Self, MonitorError> {
        toml::from_str(text).map_err(|e| MonitorError::Config(e.to_string()))
    }

    /// Reads, resolves relative paths, applies environment overrides and
    /// validates.
    pub fn load(path: &Path) -> Result<Self, MonitorError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.log_dir);
        for cam in &mut self.cameras {
            match &mut cam.source {
                SourceSpec::Video(p) | SourceSpec::Directory(p) => fix(p),
                SourceSpec::Snapshot(_) => {}
            }
        }
        for det in self.detectors.values_mut() {
            match det {
                DetectorSettings::Stub { fixture } => fix(fixture),
                DetectorSettings::Onnx(cfg) => {
                    if let Some(p) = cfg.model_path.as_mut() {
                        fix(p);
                    }
                }
            }
        }
    }

    /// Applies overrides from `lookup` (the process environment in
    /// [`MonitorConfig::load`]).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), MonitorError> {
        if let Some(bind) = lookup(ENV_BIND) {
            self.server.bind = bind;
        }
        if let Some(port) = lookup(ENV_PORT) {
            self.server.port = port
                .trim()
                .parse()
                .map_err(|_| MonitorError::Config(format!("{ENV_PORT}={port:?} is not a port number")))?;
        }
        if let Some(dir) = lookup(ENV_LOG_DIR) {
            self.log_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        let bad = |m: String| Err(MonitorError::Config(m));
        let mut seen = BTreeSet::new();
        for cam in &self.cameras {
            validate_camera_id(&cam.id)?;
            if !seen.insert(cam.id.as_str()) {
                return bad(format!("duplicate camera id '{}'", cam.id));
            }
            if !(cam.poll_interval_seconds.is_finite() && cam.poll_interval_seconds > 0.0) {
                return bad(format!(
                    "camera '{}': poll_interval_seconds must be > 0, got {}",
                    cam.id, cam.poll_interval_seconds
                ));
            }
            if let SourceSpec::Snapshot(url) = &cam.source {
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    return bad(format!("camera '{}': snapshot URL must be http(s), got {url:?}", cam.id));
                }
            }
            if !self.detectors.contains_key(&cam.detector) {
                return bad(format!("camera '{}' references unknown detector '{}'", cam.id, cam.detector));
            }
        }
        for (name, det) in &self.detectors {
            if let DetectorSettings::Onnx(cfg) = det {
                cfg.validate()
                    .map_err(|e| MonitorError::Config(format!("detector '{name}': {e}")))?;
                if cfg.model_path.is_none() {
                    return bad(format!("detector '{name}': model_path is required for the onnx backend"));
                }
            }
        }
        let m = &self.monitor;
        if m.min_consecutive == 0 {
            return bad("monitor.min_consecutive must be >= 1".into());
        }
        if !(m.freshness_intervals.is_finite() && m.freshness_intervals > 0.0) {
            return bad("monitor.freshness_intervals must be > 0".into());
        }
        let r = &m.snapshot_retry;
        if !(r.timeout_seconds.is_finite() && r.timeout_seconds > 0.0) {
            return bad("monitor.snapshot_retry.timeout_seconds must be > 0".into());
        }
        if r.max_delay_ms < r.base_delay_ms {
            return bad("monitor.snapshot_retry.max_delay_ms must be >= base_delay_ms".into());
        }
        if self.server.bind.trim().is_empty() {
            return bad("server.bind must not be empty".into());
        }
        Ok(())
    }

    pub fn camera(&self, id: &str) -> Option<&CameraConfig> {
        self.cameras.iter().find(|c| c.id == id)
    }
}

/// Camera ids name log directories, so they are restricted to
/// `[A-Za-z0-9_-]`.
pub fn validate_camera_id(id: &str) -> Result<(), MonitorError> {
    if id.is_empty() || id.len() > 64 || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(MonitorError::Config(format!(
            "camera id {id:?} must be 1-64 characters of [A-Za-z0-9_-]"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
log_dir = "logs"

[server]
port = 9000

[detectors.default]
backend = "stub"
fixture = "preds.json"

[detectors.model]
backend = "onnx"
model_path = "m.onnx"
input_size = 640

[[cameras]]
id = "erb"
source = { snapshot = "http://localhost/snap.jpg" }

[[cameras]]
id = "ccb"
source = { directory = "frames" }
poll_interval_seconds = 2.5
detector = "model"
enabled = false
"#;

    #[test]
    fn parses_and_applies_defaults() {
        let c = MonitorConfig::from_toml(SAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.cameras.len(), 2);
        assert_eq!(c.cameras[0].poll_interval_seconds, 5.0);
        assert!(c.cameras[0].enabled);
        assert_eq!(c.cameras[0].detector, "default");
        assert!(!c.cameras[1].enabled);
        assert_eq!(c.monitor.min_consecutive, 2);
        assert_eq!(c.monitor.gap_tolerance, 1);
        assert_eq!(c.server.address(), "127.0.0.1:9000");
        match &c.detectors["model"] {
            DetectorSettings::Onnx(cfg) => {
                assert_eq!(cfg.input_size, 640);
                assert_eq!(cfg.confidence_threshold, 0.25);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolves_relative_paths() {
        let mut c = MonitorConfig::from_toml(SAMPLE).unwrap();
        c.resolve_paths(Path::new("/etc/bw"));
        assert_eq!(c.log_dir, PathBuf::from("/etc/bw/logs"));
        assert_eq!(c.cameras[1].source, SourceSpec::Directory("/etc/bw/frames".into()));
        assert_eq!(
            c.detectors["default"],
            DetectorSettings::Stub {
                fixture: "/etc/bw/preds.json".into()
            }
        );
    }

    #[test]
    fn env_overrides_file() {
        let mut c = MonitorConfig::from_toml(SAMPLE).unwrap();
        c.apply_env(|k| match k {
            ENV_BIND => Some("0.0.0.0".into()),
            ENV_LOG_DIR => Some("/var/log/bw".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.server.address(), "0.0.0.0:9000");
        assert_eq!(c.log_dir, PathBuf::from("/var/log/bw"));
        assert!(c.apply_env(|k| (k == ENV_PORT).then(|| "http".into())).is_err());
    }

    #[test]
    fn rejects_invalid_configs() {
        let cases = [
            SAMPLE.replace("id = \"ccb\"", "id = \"erb\""),
            SAMPLE.replace("poll_interval_seconds = 2.5", "poll_interval_seconds = 0.0"),
            SAMPLE.replace("detector = \"model\"", "detector = \"missing\""),
            SAMPLE.replace("id = \"ccb\"", "id = \"../etc\""),
            SAMPLE.replace("http://localhost", "ftp://localhost"),
            SAMPLE.replace("input_size = 640", "input_size = 700"),
            format!("{SAMPLE}\n[monitor]\nmin_consecutive = 0\n"),
        ];
        for (i, text) in cases.iter().enumerate() {
            let c = MonitorConfig::from_toml(text).unwrap();
            assert!(c.validate().is_err(), "case {i} should fail");
        }
        assert!(MonitorConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let r = RetrySettings {
            base_delay_ms: 100,
            max_delay_ms: 1000,
            ..RetrySettings::default()
        };
        let got: Vec<u64> = (0..6).map(|a| r.delay_ms(a)).collect();
        assert_eq!(got, [100, 200, 400, 800, 1000, 1000]);
        assert_eq!(r.delay_ms(200), 1000);
    }
}
