//! Detection backends and the pre/post-processing around them.
//!
//! A backend turns a [`Frame`] into detections in the frame's pixel space.
//! Two implementations exist: [`StubBackend`], which replays a fixture file,
//! and the ONNX backend in the `bargewatch-onnx` crate. Model backends share
//! [`letterbox`] for input preparation and [`decode`] for turning raw
//! candidates into detections.
//!
//! Fixture / prediction files are JSON objects keyed by image id:
//!
//! ```text
//! {
//!   "erb_0001": [{"label": "barge", "box": [0.40, 0.40, 0.60, 0.60], "confidence": 0.91}],
//!   "erb_0002": []
//! }
//! ```
//!
//! `box` is `[x_min, y_min, x_max, y_max]` normalized to the image size.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nms, BBox, Detection, GeometryError, Space};
use crate::scene::{LabelMap, ObjectLabel};

/// Model input sizes a detector may be configured with.
pub const ALLOWED_INPUT_SIZES: [u32; 6] = [320, 512, 640, 896, 1024, 1216];

/// Letterbox padding value.
pub const PAD_GRAY: u8 = 114;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("failed to load model {path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("no fixture entry for image '{0}'")]
    MissingFixture(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn default_input_size() -> u32 {
    1216
}
fn default_confidence() -> f64 {
    0.25
}
fn default_nms_iou() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_input_size")]
    pub input_size: u32,
    #[serde(default = "default_confidence")]
    pub confidence_threshold: f64,
    #[serde(default = "default_nms_iou")]
    pub nms_iou_threshold: f64,
    #[serde(default)]
    pub label_map: LabelMap,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            input_size: default_input_size(),
            confidence_threshold: default_confidence(),
            nms_iou_threshold: default_nms_iou(),
            label_map: LabelMap::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !ALLOWED_INPUT_SIZES.contains(&self.input_size) {
            return Err(DetectorError::InvalidConfig(format!(
                "input_size {} is not one of {:?}",
                self.input_size, ALLOWED_INPUT_SIZES
            )));
        }
        for (name, v) in [
            ("confidence_threshold", self.confidence_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(DetectorError::InvalidConfig(format!("{name} {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Aspect-preserving resize plus centred padding onto a square model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LetterboxMapping {
    pub scale: f64,
    /// Leading (left) padding; the trailing side gets any extra pixel.
    pub pad_x: u32,
    /// Leading (top) padding.
    pub pad_y: u32,
    pub source_width: u32,
    pub source_height: u32,
    pub scaled_width: u32,
    pub scaled_height: u32,
    pub target_size: u32,
}

pub fn letterbox(width: u32, height: u32, target_size: u32) -> Result<LetterboxMapping, DetectorError> {
    if width == 0 || height == 0 || target_size == 0 {
        return Err(DetectorError::InvalidArgument(format!(
            "letterbox needs positive sizes, got {width}x{height} -> {target_size}"
        )));
    }
    let scale = f64::from(target_size) / f64::from(width.max(height));
    let scaled = |v: u32| ((f64::from(v) * scale).round() as u32).clamp(1, target_size);
    let (sw, sh) = (scaled(width), scaled(height));
    Ok(LetterboxMapping {
        scale,
        pad_x: (target_size - sw) / 2,
        pad_y: (target_size - sh) / 2,
        source_width: width,
        source_height: height,
        scaled_width: sw,
        scaled_height: sh,
        target_size,
    })
}

impl LetterboxMapping {
    pub fn to_model(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + f64::from(self.pad_x), y * self.scale + f64::from(self.pad_y))
    }

    pub fn to_source(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - f64::from(self.pad_x)) / self.scale, (y - f64::from(self.pad_y)) / self.scale)
    }

    /// Resizes and pads `image` into the model input canvas.
    pub fn apply(&self, image: &RgbImage) -> RgbImage {
        let resized = if image.dimensions() == (self.scaled_width, self.scaled_height) {
            image.clone()
        } else {
            imageops::resize(image, self.scaled_width, self.scaled_height, imageops::FilterType::Triangle)
        };
        let mut canvas = RgbImage::from_pixel(self.target_size, self.target_size, Rgb([PAD_GRAY; 3]));
        imageops::replace(&mut canvas, &resized, i64::from(self.pad_x), i64::from(self.pad_y));
        canvas
    }
}

/// One model candidate before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    /// `[x_min, y_min, x_max, y_max]` in model-input pixels.
    pub bbox: [f64; 4],
    /// One score per label-map index.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeOutput {
    pub detections: Vec<Detection>,
    pub below_threshold: usize,
    /// Candidates with nothing left inside the frame after un-letterboxing.
    pub dropped_outside: usize,
}

/// Thresholds, un-letterboxes, clips and suppresses raw candidates.
pub fn decode(raw: &[RawPrediction], mapping: &LetterboxMapping, config: &DetectorConfig) -> Result<DecodeOutput, DetectorError> {
    let mut out = DecodeOutput::default();
    let space = Space::Pixel {
        width: mapping.source_width,
        height: mapping.source_height,
    };
    let mut candidates = Vec::new();
    for cand in raw {
        if cand.scores.len() != config.label_map.len() {
            return Err(DetectorError::Inference(format!(
                "candidate has {} scores, label map has {} labels",
                cand.scores.len(),
                config.label_map.len()
            )));
        }
        if cand.scores.iter().chain(&cand.bbox).any(|v| !v.is_finite()) {
            return Err(DetectorError::Inference("non-finite value in model output".into()));
        }
        let (best, score) = cand
            .scores
            .iter()
            .copied()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        let score = score.clamp(0.0, 1.0);
        if score < config.confidence_threshold {
            out.below_threshold += 1;
            continue;
        }
        let [x0, y0, x1, y1] = cand.bbox;
        let (sx0, sy0) = mapping.to_source(x0.min(x1), y0.min(y1));
        let (sx1, sy1) = mapping.to_source(x0.max(x1), y0.max(y1));
        let Some(bbox) = BBox::clipped(sx0, sy0, sx1, sy1, space) else {
            out.dropped_outside += 1;
            continue;
        };
        candidates.push(Detection::new(bbox, config.label_map.label(best).expect("index within label map"), score)?);
    }
    out.detections = nms(&candidates, config.nms_iou_threshold);
    Ok(out)
}

/// An image handed to a backend, with the id fixtures are keyed by.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(id: impl Into<String>, image: RgbImage) -> Self {
        Self { id: id.into(), image }
    }

    pub fn space(&self) -> Space {
        let (width, height) = self.image.dimensions();
        Space::Pixel { width, height }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendInfo {
    pub name: String,
    pub detail: String,
}

/// A loaded detector. Instances need not be shareable between threads;
/// give each worker its own.
pub trait DetectorBackend: Send {
    fn describe(&self) -> BackendInfo;

    /// Detections in `frame`'s pixel space.
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectorError>;
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for Box<T> {
    fn describe(&self) -> BackendInfo {
        (**self).describe()
    }
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectorError> {
        (**self).detect(frame)
    }
}

/// Runs `backend` and checks its output contract.
pub fn detect<B: DetectorBackend + ?Sized>(backend: &mut B, frame: &Frame) -> Result<Vec<Detection>, DetectorError> {
    let dets = backend.detect(frame)?;
    let space = frame.space();
    for d in &dets {
        if d.bbox.space() != space {
            return Err(DetectorError::Inference(format!(
                "backend returned a box in {:?}, expected {space:?}",
                d.bbox.space()
            )));
        }
    }
    Ok(dets)
}

/// One fixture entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureDetection {
    pub label: ObjectLabel,
    /// Normalized `[x_min, y_min, x_max, y_max]`.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub confidence: f64,
}

impl FixtureDetection {
    pub fn normalized_box(&self) -> Result<BBox, GeometryError> {
        let [a, b, c, d] = self.bbox;
        BBox::normalized(a, b, c, d)
    }

    pub fn to_detection(&self, space: Space) -> Result<Detection, GeometryError> {
        let bbox = self.normalized_box()?.convert(space)?;
        Detection::new(bbox, self.label, self.confidence)
    }

    pub fn from_detection(d: &Detection) -> Result<Self, GeometryError> {
        let n = d.bbox.convert(Space::Normalized)?;
        Ok(Self {
            label: d.label,
            bbox: n.corners(),
            confidence: d.confidence,
        })
    }
}

/// Per-image detections keyed by image id; the stub backend's fixture and
/// the evaluator's prediction input.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet {
    pub images: BTreeMap<String, Vec<FixtureDetection>>,
}

impl PredictionSet {
    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let fixture_err = |message: String| DetectorError::Fixture {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fixture_err(e.to_string()))?;
        let set: PredictionSet = serde_json::from_str(&text).map_err(|e| fixture_err(e.to_string()))?;
        set.validate().map_err(|e| fixture_err(e.to_string()))?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        let text = serde_json::to_string_pretty(self).expect("prediction set serializes");
        fs::write(path, text + "\n").map_err(|e| DetectorError::Fixture {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for dets in self.images.values() {
            for d in dets {
                d.to_detection(Space::Normalized)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[FixtureDetection]> {
        self.images.get(id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, id: impl Into<String>, detections: &[Detection]) -> Result<(), GeometryError> {
        let entries = detections.iter().map(FixtureDetection::from_detection).collect::<Result<_, _>>()?;
        self.images.insert(id.into(), entries);
        Ok(())
    }
}

/// Replays fixture detections by frame id.
#[derive(Debug, Clone)]
pub struct StubBackend {
    fixture: PredictionSet,
    source: String,
}

impl StubBackend {
    pub fn new(fixture: PredictionSet) -> Self {
        Self {
            fixture,
            source: "in-memory".into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        Ok(Self {
            fixture: PredictionSet::load(path)?,
            source: path.display().to_string(),
        })
    }
}

impl DetectorBackend for StubBackend {
    fn describe(&self) -> BackendInfo {
        BackendInfo {
            name: "stub".into(),
            detail: format!("{} fixture images from {}", self.fixture.images.len(), self.source),
        }
    }

    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectorError> {
        let entries = self
            .fixture
            .get(&frame.id)
            .ok_or_else(|| DetectorError::MissingFixture(frame.id.clone()))?;
        let space = frame.space();
        entries.iter().map(|e| Ok(e.to_detection(space)?)).collect()
    }
}
