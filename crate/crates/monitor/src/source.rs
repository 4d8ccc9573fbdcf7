//! Frame sources.
//!
//! * Directory replay: every image file in the directory, in lexicographic
//!   file-name order, as fast as the pipeline consumes them. The frame id
//!   is the file stem. A stem of the form `20240501T120000Z` sets the
//!   timestamp; otherwise frame `i` is stamped `start + i * poll_interval`.
//! * Video replay (animated GIF): the clip is sampled at `t = k *
//!   poll_interval` for every `t` strictly before the clip's end, so a 60 s
//!   clip at 5 s yields 12 frames (t = 0 .. 55). Frames with no delay are
//!   shown for 100 ms, as browsers do.
//! * Snapshot URL: fetched live once per poll interval. Failed fetches are
//!   retried with exponential backoff; when a poll exhausts its retries the
//!   source reports itself degraded and tries again at the next poll.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDateTime, TimeDelta, Utc};
use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, DynamicImage, Frames, RgbImage};
use thiserror::Error;

use crate::config::{CameraConfig, RetrySettings, SourceSpec};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "gif"];
const DEFAULT_GIF_DELAY_MS: f64 = 100.0;
const STEM_TIME_FORMAT: &str = "%Y%m%dT%H%M%SZ";

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("cannot open source {path}: {message}")]
    Open { path: PathBuf, message: String },
    #[error("frame {id}: {message}")]
    Frame { id: String, message: String },
    #[error("{url} unreachable after {attempts} attempts: {message}")]
    Unreachable { url: String, attempts: u32, message: String },
}

/// One sampled frame.
#[derive(Debug, Clone)]
pub struct SampledFrame {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub image: RgbImage,
    /// Path of the frame on disk, when it has one.
    pub reference: Option<String>,
}

/// Fetch statistics of a source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub frames: u64,
    pub failed_attempts: u64,
    pub retries: u64,
    pub degraded_polls: u64,
}

/// A stream of frames.
///
/// `Ok(None)` means the source is exhausted. An `Err` reports a problem
/// with one frame or poll; the source has already moved past it, so the
/// caller may keep pulling.
pub trait FrameSource {
    fn next_frame(&mut self) -> Result<Option<SampledFrame>, SourceError>;

    fn stats(&self) -> SourceStats;

    /// Whether the last poll exhausted its retries.
    fn is_degraded(&self) -> bool {
        false
    }
}

/// Opens the source described by `camera`. `stop` interrupts waits between
/// live polls.
pub fn open_source(
    camera: &CameraConfig,
    retry: &RetrySettings,
    stop: Arc<AtomicBool>,
) -> Result<Box<dyn FrameSource>, SourceError> {
    let interval = Duration::from_secs_f64(camera.poll_interval_seconds);
    let start = camera.start.unwrap_or_else(Utc::now);
    Ok(match &camera.source {
        SourceSpec::Directory(dir) => Box::new(DirectorySource::open(dir, start, interval)?),
        SourceSpec::Video(path) => Box::new(VideoSource::open(path, start, interval)?),
        SourceSpec::Snapshot(url) => Box::new(SnapshotSource::new(&camera.id, url, interval, retry.clone(), stop)?),
    })
}

fn to_delta(d: Duration) -> TimeDelta {
    TimeDelta::from_std(d).unwrap_or(TimeDelta::MAX)
}

pub struct DirectorySource {
    files: Vec<PathBuf>,
    next: usize,
    start: DateTime<Utc>,
    interval: Duration,
    stats: SourceStats,
}

impl DirectorySource {
    pub fn open(dir: &Path, start: DateTime<Utc>, interval: Duration) -> Result<Self, SourceError> {
        let open_err = |message: String| SourceError::Open {
            path: dir.to_path_buf(),
            message,
        };
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| open_err(e.to_string()))? {
            let path = entry.map_err(|e| open_err(e.to_string()))?.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if is_image && path.is_file() {
                files.push(path);
            }
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        Ok(Self {
            files,
            next: 0,
            start,
            interval,
            stats: SourceStats::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl FrameSource for DirectorySource {
    fn next_frame(&mut self) -> Result<Option<SampledFrame>, SourceError> {
        let Some(path) = self.files.get(self.next) else {
            return Ok(None);
        };
        let index = self.next;
        self.next += 1;
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let timestamp = NaiveDateTime::parse_from_str(&id, STEM_TIME_FORMAT)
            .map(|t| t.and_utc())
            .unwrap_or_else(|_| self.start + to_delta(self.interval.mul_f64(index as f64)));
        let image = image::open(path).map_err(|e| {
            self.stats.failed_attempts += 1;
            SourceError::Frame {
                id: id.clone(),
                message: e.to_string(),
            }
        })?;
        self.stats.frames += 1;
        Ok(Some(SampledFrame {
            id,
            timestamp,
            image: image.to_rgb8(),
            reference: Some(path.display().to_string()),
        }))
    }

    fn stats(&self) -> SourceStats {
        self.stats
    }
}

struct Shown {
    image: RgbImage,
    end_ms: f64,
}

pub struct VideoSource {
    stem: String,
    path: PathBuf,
    frames: Option<Frames<'static>>,
    shown: Option<Shown>,
    clip_ms: f64,
    k: u64,
    start: DateTime<Utc>,
    interval_ms: f64,
    stats: SourceStats,
}

impl VideoSource {
    pub fn open(path: &Path, start: DateTime<Utc>, interval: Duration) -> Result<Self, SourceError> {
        let open_err = |message: String| SourceError::Open {
            path: path.to_path_buf(),
            message,
        };
        let file = File::open(path).map_err(|e| open_err(e.to_string()))?;
        let decoder = GifDecoder::new(BufReader::new(file)).map_err(|e| open_err(e.to_string()))?;
        Ok(Self {
            stem: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            path: path.to_path_buf(),
            frames: Some(decoder.into_frames()),
            shown: None,
            clip_ms: 0.0,
            k: 0,
            start,
            interval_ms: interval.as_secs_f64() * 1000.0,
            stats: SourceStats::default(),
        })
    }
}

impl FrameSource for VideoSource {
    fn next_frame(&mut self) -> Result<Option<SampledFrame>, SourceError> {
        let t = self.k as f64 * self.interval_ms;
        loop {
            if let Some(shown) = &self.shown {
                if t < shown.end_ms {
                    break;
                }
            }
            let Some(frames) = self.frames.as_mut() else {
                return Ok(None);
            };
            match frames.next() {
                None => {
                    self.frames = None;
                    return Ok(None);
                }
                Some(Err(e)) => {
                    self.frames = None;
                    self.stats.failed_attempts += 1;
                    return Err(SourceError::Frame {
                        id: format!("{}@{:.0}ms", self.stem, self.clip_ms),
                        message: e.to_string(),
                    });
                }
                Some(Ok(frame)) => {
                    let (num, den) = frame.delay().numer_denom_ms();
                    let mut delay = f64::from(num) / f64::from(den.max(1));
                    if delay <= 0.0 {
                        delay = DEFAULT_GIF_DELAY_MS;
                    }
                    self.clip_ms += delay;
                    self.shown = Some(Shown {
                        image: DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8(),
                        end_ms: self.clip_ms,
                    });
                }
            }
        }
        let shown = self.shown.as_ref().expect("loop exits with a frame");
        let k = self.k;
        self.k += 1;
        self.stats.frames += 1;
        Ok(Some(SampledFrame {
            id: format!("{}_{k:06}", self.stem),
            timestamp: self.start + TimeDelta::microseconds((t * 1000.0).round() as i64),
            image: shown.image.clone(),
            reference: Some(self.path.display().to_string()),
        }))
    }

    fn stats(&self) -> SourceStats {
        self.stats
    }
}

pub struct SnapshotSource {
    camera_id: String,
    url: String,
    interval: Duration,
    retry: RetrySettings,
    agent: ureq::Agent,
    stop: Arc<AtomicBool>,
    next_poll: Option<Instant>,
    degraded: bool,
    stats: SourceStats,
}

impl SnapshotSource {
    pub fn new(
        camera_id: &str,
        url: &str,
        interval: Duration,
        retry: RetrySettings,
        stop: Arc<AtomicBool>,
    ) -> Result<Self, SourceError> {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(SourceError::Open {
                path: url.into(),
                message: "snapshot URL must be http(s)".into(),
            });
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(retry.timeout_seconds)))
            .build()
            .into();
        Ok(Self {
            camera_id: camera_id.to_string(),
            url: url.to_string(),
            interval,
            retry,
            agent,
            stop,
            next_poll: None,
            degraded: false,
            stats: SourceStats::default(),
        })
    }

    /// Sleeps until `deadline`; false if stopped first.
    fn wait_until(&self, deadline: Instant) -> bool {
        const SLICE: Duration = Duration::from_millis(50);
        loop {
            if self.stop.load(Ordering::Relaxed) {
                return false;
            }
            let now = Instant::now();
            if now >= deadline {
                return true;
            }
            std::thread::sleep((deadline - now).min(SLICE));
        }
    }

    fn fetch(&self) -> Result<RgbImage, String> {
        let mut response = self.agent.get(&self.url).call().map_err(|e| e.to_string())?;
        let bytes = response.body_mut().read_to_vec().map_err(|e| e.to_string())?;
        image::load_from_memory(&bytes)
            .map(|img| img.to_rgb8())
            .map_err(|e| format!("undecodable snapshot: {e}"))
    }
}

impl FrameSource for SnapshotSource {
    fn next_frame(&mut self) -> Result<Option<SampledFrame>, SourceError> {
        if let Some(at) = self.next_poll {
            if !self.wait_until(at) {
                return Ok(None);
            }
        }
        let poll_started = Instant::now();
        self.next_poll = Some(poll_started + self.interval);

        let attempts = self.retry.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                self.stats.retries += 1;
                let delay = Duration::from_millis(self.retry.delay_ms(attempt - 1));
                log::info!(
                    "camera {}: retry {attempt}/{} in {} ms",
                    self.camera_id,
                    self.retry.max_retries,
                    delay.as_millis()
                );
                if !self.wait_until(Instant::now() + delay) {
                    return Ok(None);
                }
            }
            match self.fetch() {
                Ok(image) => {
                    if self.degraded {
                        log::info!("camera {}: snapshot source recovered", self.camera_id);
                    }
                    self.degraded = false;
                    self.stats.frames += 1;
                    let timestamp = Utc::now();
                    return Ok(Some(SampledFrame {
                        id: format!("{}_{}", self.camera_id, timestamp.format("%Y%m%dT%H%M%S%.3fZ")),
                        timestamp,
                        image,
                        reference: None,
                    }));
                }
                Err(e) => {
                    self.stats.failed_attempts += 1;
                    log::warn!("camera {}: fetch {} failed: {e}", self.camera_id, self.url);
                    last_error = e;
                }
            }
        }
        self.degraded = true;
        self.stats.degraded_polls += 1;
        Err(SourceError::Unreachable {
            url: self.url.clone(),
            attempts,
            message: last_error,
        })
    }

    fn stats(&self) -> SourceStats {
        self.stats
    }

    fn is_degraded(&self) -> bool {
        self.degraded
    }
}
