#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use bargewatch_core::detector::{FixtureDetection, PredictionSet};
use bargewatch_core::{ObjectLabel, SceneClass};
use bargewatch_monitor::config::{CameraConfig, DetectorSettings, MonitorConfig, SourceSpec};
use bargewatch_monitor::server::{self, AppState};
use bargewatch_monitor::StatusBoard;
use chrono::{DateTime, TimeZone, Utc};
use image::{Rgb, RgbImage};

/// Scene per replayed frame. With min_consecutive 2 and gap_tolerance 1 it
/// debounces into D, D, D, D, B; the trailing single E is dropped.
pub const DAY: &str = "ADDAADDDAADADAADDABBAAEAA";

pub fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap()
}

pub fn labels(scene: SceneClass) -> &'static [ObjectLabel] {
    match scene {
        SceneClass::A => &[],
        SceneClass::B => &[ObjectLabel::VesselWithoutBarge],
        SceneClass::C => &[ObjectLabel::VesselWithoutBarge, ObjectLabel::Barge],
        SceneClass::D => &[ObjectLabel::VesselWithBarge, ObjectLabel::Barge],
        SceneClass::E => &[ObjectLabel::Barge],
        SceneClass::F => &[ObjectLabel::VesselWithBarge],
    }
}

/// Confidence of every detection in frame `i`.
pub fn confidence(i: usize) -> f64 {
    [0.61, 0.87, 0.74, 0.92, 0.55][i % 5]
}

/// Writes one PNG per scene letter into `dir/frames` and the matching
/// stub fixture into `dir/predictions.json`.
pub fn write_replay(dir: &Path, scenes: &str) {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let mut fixture = BTreeMap::new();
    for (i, c) in scenes.chars().enumerate() {
        let scene: SceneClass = c.to_string().parse().unwrap();
        let id = format!("frame_{i:04}");
        RgbImage::from_pixel(32, 24, Rgb([(i * 9) as u8, 80, 160]))
            .save(frames.join(format!("{id}.png")))
            .unwrap();
        let dets: Vec<FixtureDetection> = labels(scene)
            .iter()
            .enumerate()
            .map(|(k, &label)| FixtureDetection {
                label,
                bbox: [0.1 + 0.3 * k as f64, 0.2, 0.35 + 0.3 * k as f64, 0.6],
                confidence: confidence(i),
            })
            .collect();
        fixture.insert(id, dets);
    }
    let set: PredictionSet = serde_json::from_value(serde_json::to_value(fixture).unwrap()).unwrap();
    set.save(&dir.join("predictions.json")).unwrap();
}

pub fn replay_config(dir: &Path, log_dir: &Path) -> MonitorConfig {
    let mut config = MonitorConfig::from_toml("").unwrap();
    config.log_dir = log_dir.to_path_buf();
    config.detectors.insert(
        "default".into(),
        DetectorSettings::Stub {
            fixture: dir.join("predictions.json"),
        },
    );
    config.cameras.push(CameraConfig {
        id: "erb".into(),
        source: SourceSpec::Directory(dir.join("frames")),
        poll_interval_seconds: 5.0,
        enabled: true,
        detector: "default".into(),
        start: Some(start()),
    });
    config
}

pub struct TestServer {
    pub base: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    pub fn start(config: &MonitorConfig, board: StatusBoard) -> Self {
        let state = AppState::new(config, board);
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = server::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(server::local_addr(&listener).unwrap()).unwrap();
                server::serve(listener, state, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn get(&self, path: &str) -> (u16, serde_json::Value) {
        self.get_with(path, None)
    }

    pub fn get_with(&self, path: &str, token: Option<&str>) -> (u16, serde_json::Value) {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.call().unwrap();
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&body).unwrap_or(serde_json::Value::Null))
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
