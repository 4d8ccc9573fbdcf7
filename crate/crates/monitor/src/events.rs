//! Per-frame observations and their debouncing into passage events.
//!
//! A passage event is a maximal run of one non-`A` scene class. The run may
//! be interrupted by up to `gap_tolerance` consecutive frames of another
//! class (including `A`); it ends at its last frame of the run's class and
//! becomes an event only if it holds at least `min_consecutive` frames of
//! that class. After an event the scan resumes right after the event's last
//! frame, so events never overlap. A run that falls short is dropped and
//! the scan moves on by one frame.

use std::collections::BTreeMap;

use bargewatch_core::detector::FixtureDetection;
use bargewatch_core::geometry::Detection;
use bargewatch_core::{classify_scene, SceneClass};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::MonitorError;

/// One processed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub camera_id: String,
    pub frame_id: String,
    pub timestamp: DateTime<Utc>,
    /// Always `classify_scene` of the detection labels.
    pub scene: SceneClass,
    pub detections: Vec<FixtureDetection>,
    /// Where the frame came from, when it exists on disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

impl FrameObservation {
    pub fn new(
        camera_id: impl Into<String>,
        frame_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        detections: &[Detection],
        frame: Option<String>,
    ) -> Result<Self, MonitorError> {
        let detections = detections
            .iter()
            .map(FixtureDetection::from_detection)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MonitorError::InvalidArgument(e.to_string()))?;
        Ok(Self {
            camera_id: camera_id.into(),
            frame_id: frame_id.into(),
            timestamp,
            scene: classify_scene(detections.iter().map(|d| d.label)),
            detections,
            frame,
        })
    }

    /// Highest detection confidence in the frame, 0 when empty.
    pub fn peak_confidence(&self) -> f64 {
        self.detections.iter().map(|d| d.confidence).fold(0.0, f64::max)
    }
}

/// A debounced vessel or barge passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageEvent {
    pub camera_id: String,
    pub scene: SceneClass,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Frames of `scene` in the run; bridged frames are not counted.
    pub frame_count: usize,
    /// Highest detection confidence over the counted frames.
    pub peak_confidence: f64,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    timestamp: DateTime<Utc>,
    scene: SceneClass,
    confidence: f64,
}

/// Online form of [`extract_events`] for one camera.
///
/// Events are emitted as soon as the run that forms them can no longer
/// grow, and the output equals the batch result over the same frames.
#[derive(Debug, Clone)]
pub struct EventTracker {
    camera_id: String,
    min_consecutive: usize,
    gap_tolerance: usize,
    buffer: Vec<Sample>,
    last: Option<DateTime<Utc>>,
}

impl EventTracker {
    pub fn new(camera_id: impl Into<String>, min_consecutive: usize, gap_tolerance: usize) -> Result<Self, MonitorError> {
        if min_consecutive == 0 {
            return Err(MonitorError::InvalidArgument("min_consecutive must be >= 1".into()));
        }
        Ok(Self {
            camera_id: camera_id.into(),
            min_consecutive,
            gap_tolerance,
            buffer: Vec::new(),
            last: None,
        })
    }

    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }

    /// Frames held back while a run may still grow.
    pub fn pending(&self) -> usize {
        self.buffer.len()
    }

    pub fn push(&mut self, obs: &FrameObservation) -> Result<Vec<PassageEvent>, MonitorError> {
        if obs.camera_id != self.camera_id {
            return Err(MonitorError::InvalidArgument(format!(
                "observation for camera '{}' pushed to tracker of '{}'",
                obs.camera_id, self.camera_id
            )));
        }
        if let Some(last) = self.last {
            if obs.timestamp < last {
                return Err(MonitorError::InvalidArgument(format!(
                    "camera '{}': observation at {} precedes {}",
                    self.camera_id, obs.timestamp, last
                )));
            }
        }
        self.last = Some(obs.timestamp);
        self.buffer.push(Sample {
            timestamp: obs.timestamp,
            scene: obs.scene,
            confidence: obs.peak_confidence(),
        });
        Ok(self.scan(false))
    }

    /// Closes any open run. The tracker can keep going afterwards.
    pub fn finish(&mut self) -> Vec<PassageEvent> {
        self.scan(true)
    }

    fn scan(&mut self, at_end: bool) -> Vec<PassageEvent> {
        let b = &self.buffer;
        let mut events = Vec::new();
        let mut i = 0;
        while i < b.len() {
            let class = b[i].scene;
            if class == SceneClass::A {
                i += 1;
                continue;
            }
            let (mut last, mut count, mut peak, mut gap) = (i, 1, b[i].confidence, 0);
            let mut closed = false;
            for (j, s) in b.iter().enumerate().skip(i + 1) {
                if s.scene == class {
                    last = j;
                    count += 1;
                    peak = peak.max(s.confidence);
                    gap = 0;
                } else {
                    gap += 1;
                    if gap > self.gap_tolerance {
                        closed = true;
                        break;
                    }
                }
            }
            if !closed && !at_end {
                break;
            }
            if count >= self.min_consecutive {
                events.push(PassageEvent {
                    camera_id: self.camera_id.clone(),
                    scene: class,
                    start: b[i].timestamp,
                    end: b[last].timestamp,
                    frame_count: count,
                    peak_confidence: peak,
                });
                i = last + 1;
            } else {
                i += 1;
            }
        }
        self.buffer.drain(..i);
        events
    }
}

/// Debounces time-ordered observations into passage events.
///
/// Observations may mix cameras; each camera must be in timestamp order.
/// Output is grouped by camera id, then ordered by start.
pub fn extract_events(
    observations: &[FrameObservation],
    min_consecutive: usize,
    gap_tolerance: usize,
) -> Result<Vec<PassageEvent>, MonitorError> {
    if min_consecutive == 0 {
        return Err(MonitorError::InvalidArgument("min_consecutive must be >= 1".into()));
    }
    let mut trackers: BTreeMap<&str, (EventTracker, Vec<PassageEvent>)> = BTreeMap::new();
    for obs in observations {
        let (tracker, found) = trackers.entry(&obs.camera_id).or_insert_with(|| {
            let t = EventTracker::new(obs.camera_id.clone(), min_consecutive, gap_tolerance);
            (t.expect("min_consecutive checked above"), Vec::new())
        });
        found.extend(tracker.push(obs)?);
    }
    Ok(trackers
        .into_values()
        .flat_map(|(mut t, mut ev)| {
            ev.extend(t.finish());
            ev
        })
        .collect())
}
