mod common;

use bargewatch_core::SceneClass;
use bargewatch_monitor::eventlog::{log_dates, log_path, read_events};
use bargewatch_monitor::{CameraState, Monitor, PassageEvent};

fn at(i: i64) -> chrono::DateTime<chrono::Utc> {
    common::start() + chrono::Duration::seconds(5 * i)
}

/// Events of [`common::DAY`] worked out by hand.
fn expected() -> Vec<PassageEvent> {
    use SceneClass::*;
    [
        (D, 1, 2, 2, 0.87),
        (D, 5, 7, 3, 0.87),
        (D, 10, 12, 2, 0.74),
        (D, 15, 16, 2, 0.87),
        (B, 18, 19, 2, 0.92),
    ]
    .into_iter()
    .map(|(scene, s, e, n, peak)| PassageEvent {
        camera_id: "erb".into(),
        scene,
        start: at(s),
        end: at(e),
        frame_count: n,
        peak_confidence: peak,
    })
    .collect()
}

fn run_once(dir: &std::path::Path, log_dir: &std::path::Path) -> Monitor {
    let monitor = Monitor::new(common::replay_config(dir, log_dir)).unwrap();
    let results = monitor.start().unwrap().wait();
    assert_eq!(results.len(), 1);
    let summary = results[0].1.as_ref().unwrap();
    assert_eq!(summary.frames, common::DAY.len() as u64);
    assert_eq!(summary.frame_errors, 0);
    monitor
}

#[test]
fn replay_produces_hand_simulated_events() {
    let dir = tempfile::tempdir().unwrap();
    common::write_replay(dir.path(), common::DAY);
    let logs = dir.path().join("logs");
    let monitor = run_once(dir.path(), &logs);

    assert_eq!(read_events(&logs, "erb", None, None).unwrap(), expected());
    let board = monitor.board();
    let status = board.read().unwrap()["erb"].clone();
    assert_eq!(status.state, CameraState::Finished);
    assert_eq!(status.events_written, 5);
    assert_eq!(status.frames_processed, 25);
    assert_eq!(status.last_frame_at, Some(at(24)));
    assert_eq!(status.last_observation.unwrap().frame_id, "frame_0024");
}

#[test]
fn replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    common::write_replay(dir.path(), common::DAY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_once(dir.path(), &a);
    run_once(dir.path(), &b);
    let dates = log_dates(&a, "erb").unwrap();
    assert_eq!(dates, log_dates(&b, "erb").unwrap());
    for d in dates {
        let x = std::fs::read(log_path(&a, "erb", d)).unwrap();
        let y = std::fs::read(log_path(&b, "erb", d)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y);
    }
}

#[test]
fn daily_endpoint_reports_the_replayed_day() {
    let dir = tempfile::tempdir().unwrap();
    common::write_replay(dir.path(), common::DAY);
    let logs = dir.path().join("logs");
    let monitor = run_once(dir.path(), &logs);
    let server = common::TestServer::start(monitor.config(), monitor.board());

    let (code, body) = server.get("/cameras/erb/daily?date=2024-05-01");
    assert_eq!(code, 200);
    assert_eq!(body["vessel_count"], 5);
    assert_eq!(body["with_barge_count"], 4);
    assert_eq!(body["barge_only_count"], 0);
    assert_eq!(body["pct_with_barges"], 0.8);

    let (code, body) = server.get("/cameras/erb/events?from=2024-05-01T12:01:00Z");
    assert_eq!(code, 200);
    // events ending at or after 12:01:00 (frame 12)
    assert_eq!(body.as_array().unwrap().len(), 3);
}

#[test]
fn missing_fixture_frames_are_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    common::write_replay(dir.path(), "ADDA");
    image::RgbImage::new(8, 8)
        .save(dir.path().join("frames").join("frame_0002b.png"))
        .unwrap();
    let monitor = Monitor::new(common::replay_config(dir.path(), &dir.path().join("logs"))).unwrap();
    let results = monitor.start().unwrap().wait();
    let summary = results[0].1.as_ref().unwrap();
    assert_eq!((summary.frames, summary.frame_errors), (4, 1));
    assert_eq!(summary.events.len(), 1);
}

#[test]
fn unreadable_source_fails_only_its_camera() {
    let dir = tempfile::tempdir().unwrap();
    common::write_replay(dir.path(), "ADDA");
    let mut config = common::replay_config(dir.path(), &dir.path().join("logs"));
    let mut broken = config.cameras[0].clone();
    broken.id = "ccb".into();
    broken.source = bargewatch_monitor::SourceSpec::Directory(dir.path().join("missing"));
    config.cameras.push(broken);
    let monitor = Monitor::new(config).unwrap();
    let results = monitor.start().unwrap().wait();
    let by_id: std::collections::BTreeMap<_, _> = results.into_iter().collect();
    assert_eq!(by_id["erb"].as_ref().unwrap().events.len(), 1);
    assert!(by_id["ccb"].is_err());
    assert_eq!(monitor.board().read().unwrap()["ccb"].state, CameraState::Failed);
}
