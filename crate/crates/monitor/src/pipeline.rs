//! Per-camera pipelines and the shared status board.
//!
//! Every enabled camera gets its own thread running sample, detect,
//! classify, debounce and append. Pipelines share nothing except the
//! status board, where each publishes a fresh snapshot of its camera's
//! status after every frame.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use bargewatch_core::detector::{detect, DetectorBackend, Frame, StubBackend};
use bargewatch_onnx::OnnxBackend;
use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::config::{CameraConfig, DetectorSettings, MonitorConfig};
use crate::eventlog::EventLog;
use crate::events::{EventTracker, FrameObservation, PassageEvent};
use crate::source::{open_source, FrameSource, SourceError};
use crate::MonitorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraState {
    /// Configured but no pipeline running (e.g. API-only mode).
    Idle,
    Disabled,
    Starting,
    Running,
    /// The last poll exhausted its retries.
    Degraded,
    /// A replay source ran out of frames.
    Finished,
    Stopped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraStatus {
    pub id: String,
    pub enabled: bool,
    pub source: String,
    pub detector: String,
    pub poll_interval_seconds: f64,
    pub state: CameraState,
    pub frames_processed: u64,
    pub frame_errors: u64,
    pub events_written: u64,
    pub events_queued: usize,
    pub log_alerts: u64,
    pub source_retries: u64,
    /// Timestamp of the newest processed frame.
    pub last_frame_at: Option<DateTime<Utc>>,
    /// Wall-clock time the newest frame was processed.
    pub last_processed_at: Option<DateTime<Utc>>,
    pub last_error: Option<String>,
    pub last_observation: Option<FrameObservation>,
}

impl CameraStatus {
    pub fn new(camera: &CameraConfig) -> Self {
        Self {
            id: camera.id.clone(),
            enabled: camera.enabled,
            source: camera.source.describe(),
            detector: camera.detector.clone(),
            poll_interval_seconds: camera.poll_interval_seconds,
            state: if camera.enabled {
                CameraState::Idle
            } else {
                CameraState::Disabled
            },
            frames_processed: 0,
            frame_errors: 0,
            events_written: 0,
            events_queued: 0,
            log_alerts: 0,
            source_retries: 0,
            last_frame_at: None,
            last_processed_at: None,
            last_error: None,
            last_observation: None,
        }
    }
}

/// Latest status per camera, shared by pipelines (writers, one per camera)
/// and the HTTP layer (readers).
pub type StatusBoard = Arc<RwLock<BTreeMap<String, CameraStatus>>>;

pub fn status_board(config: &MonitorConfig) -> StatusBoard {
    Arc::new(RwLock::new(
        config.cameras.iter().map(|c| (c.id.clone(), CameraStatus::new(c))).collect(),
    ))
}

/// Replaces `status` on the board in one step.
fn publish(board: &StatusBoard, status: &CameraStatus) {
    let mut map = board.write().unwrap_or_else(|e| e.into_inner());
    map.insert(status.id.clone(), status.clone());
}

pub fn build_backend(settings: &DetectorSettings) -> Result<Box<dyn DetectorBackend>, MonitorError> {
    Ok(match settings {
        DetectorSettings::Stub { fixture } => Box::new(StubBackend::load(fixture)?),
        DetectorSettings::Onnx(config) => Box::new(OnnxBackend::load(config)?),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub frames: u64,
    pub frame_errors: u64,
    pub events: Vec<PassageEvent>,
}

/// Runs one camera until its source is exhausted or `stop` is set. Open
/// runs are closed on the way out.
pub fn run_camera(
    source: &mut dyn FrameSource,
    backend: &mut dyn DetectorBackend,
    mut tracker: EventTracker,
    log: &mut EventLog,
    mut status: CameraStatus,
    board: &StatusBoard,
    stop: &AtomicBool,
) -> Result<RunSummary, MonitorError> {
    let camera_id = tracker.camera_id().to_string();
    let mut summary = RunSummary::default();
    status.state = CameraState::Running;
    publish(board, &status);

    let mut record = |events: Vec<PassageEvent>, status: &mut CameraStatus, summary: &mut RunSummary| {
        for e in events {
            status.events_queued = log.append(&e)?;
            status.log_alerts = log.alerts();
            status.events_written += 1;
            summary.events.push(e);
        }
        Ok::<(), MonitorError>(())
    };

    while !stop.load(Ordering::Relaxed) {
        let sampled = match source.next_frame() {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                if matches!(e, SourceError::Unreachable { .. }) {
                    status.state = CameraState::Degraded;
                } else {
                    status.frame_errors += 1;
                    summary.frame_errors += 1;
                }
                log::warn!("camera {camera_id}: {e}");
                status.last_error = Some(e.to_string());
                status.source_retries = source.stats().retries;
                publish(board, &status);
                continue;
            }
        };
        let frame = Frame::new(sampled.id.clone(), sampled.image);
        let observation = detect(backend, &frame)
            .map_err(MonitorError::from)
            .and_then(|dets| FrameObservation::new(&camera_id, &sampled.id, sampled.timestamp, &dets, sampled.reference));
        let events = observation.and_then(|obs| {
            let events = tracker.push(&obs)?;
            Ok((obs, events))
        });
        match events {
            Ok((obs, events)) => {
                record(events, &mut status, &mut summary)?;
                summary.frames += 1;
                status.frames_processed += 1;
                status.last_frame_at = Some(obs.timestamp);
                status.last_observation = Some(obs);
                status.state = CameraState::Running;
            }
            Err(e) => {
                log::warn!("camera {camera_id}: frame {} skipped: {e}", sampled.id);
                summary.frame_errors += 1;
                status.frame_errors += 1;
                status.last_error = Some(format!("frame {}: {e}", sampled.id));
            }
        }
        status.last_processed_at = Some(Utc::now());
        status.source_retries = source.stats().retries;
        publish(board, &status);
    }

    record(tracker.finish(), &mut status, &mut summary)?;
    status.events_queued = log.flush();
    status.log_alerts = log.alerts();
    status.state = if stop.load(Ordering::Relaxed) {
        CameraState::Stopped
    } else {
        CameraState::Finished
    };
    publish(board, &status);
    Ok(summary)
}

/// All camera pipelines of one config.
pub struct Monitor {
    config: MonitorConfig,
    board: StatusBoard,
    stop: Arc<AtomicBool>,
}

pub struct MonitorHandle {
    threads: Vec<(String, JoinHandle<Result<RunSummary, MonitorError>>)>,
    stop: Arc<AtomicBool>,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Result<Self, MonitorError> {
        config.validate()?;
        let board = status_board(&config);
        Ok(Self {
            config,
            board,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn board(&self) -> StatusBoard {
        Arc::clone(&self.board)
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Loads every enabled camera's detector and log, then starts one
    /// thread per camera. Detector and log problems fail here; source
    /// problems mark the camera failed and leave the others running.
    pub fn start(&self) -> Result<MonitorHandle, MonitorError> {
        let mut prepared = Vec::new();
        for camera in self.config.cameras.iter().filter(|c| c.enabled) {
            let backend = build_backend(&self.config.detectors[&camera.detector])?;
            let log = EventLog::open(&self.config.log_dir, &camera.id, self.config.monitor.fsync)?;
            let tracker = EventTracker::new(
                camera.id.clone(),
                self.config.monitor.min_consecutive,
                self.config.monitor.gap_tolerance,
            )?;
            prepared.push((camera.clone(), backend, log, tracker));
        }

        let mut threads = Vec::new();
        for (camera, mut backend, mut log, tracker) in prepared {
            let board = Arc::clone(&self.board);
            let stop = Arc::clone(&self.stop);
            let retry = self.config.monitor.snapshot_retry.clone();
            let id = camera.id.clone();
            log::info!(
                "camera {id}: {} with {} detector",
                camera.source.describe(),
                backend.describe().name
            );
            let handle = std::thread::Builder::new()
                .name(format!("camera-{id}"))
                .spawn(move || {
                    let mut status = CameraStatus::new(&camera);
                    status.state = CameraState::Starting;
                    publish(&board, &status);
                    let mut source = match open_source(&camera, &retry, Arc::clone(&stop)) {
                        Ok(s) => s,
                        Err(e) => {
                            log::error!("camera {}: {e}", camera.id);
                            status.state = CameraState::Failed;
                            status.last_error = Some(e.to_string());
                            publish(&board, &status);
                            return Err(MonitorError::InvalidArgument(e.to_string()));
                        }
                    };
                    let result = run_camera(&mut *source, &mut backend, tracker, &mut log, status.clone(), &board, &stop);
                    if let Err(e) = &result {
                        log::error!("camera {}: pipeline failed: {e}", camera.id);
                        let mut failed = board
                            .read()
                            .unwrap_or_else(|e| e.into_inner())
                            .get(&camera.id)
                            .cloned()
                            .unwrap_or(status);
                        failed.state = CameraState::Failed;
                        failed.last_error = Some(e.to_string());
                        publish(&board, &failed);
                    }
                    result
                })
                .map_err(|e| MonitorError::Server(format!("cannot spawn camera thread: {e}")))?;
            threads.push((id, handle));
        }
        Ok(MonitorHandle {
            threads,
            stop: Arc::clone(&self.stop),
        })
    }
}

impl MonitorHandle {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    pub fn is_finished(&self) -> bool {
        self.threads.iter().all(|(_, h)| h.is_finished())
    }

    /// Waits for every camera thread.
    pub fn wait(self) -> Vec<(String, Result<RunSummary, MonitorError>)> {
        self.threads
            .into_iter()
            .map(|(id, h)| {
                let result = h
                    .join()
                    .unwrap_or_else(|_| Err(MonitorError::Server(format!("camera {id} thread panicked"))));
                (id, result)
            })
            .collect()
    }
}
