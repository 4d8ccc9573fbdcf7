//! Axis-aligned boxes, intersection-over-union and non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::ObjectLabel;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },
    #[error("coordinate spaces differ: {0:?} vs {1:?}")]
    SpaceMismatch(Space, Space),
    #[error("pixel dimensions must be positive, got {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("confidence {0} is outside [0, 1]")]
    InvalidConfidence(f64),
}

/// Coordinate space a [`BBox`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Space {
    /// Fractions of the image extent, in `[0, 1]`.
    Normalized,
    /// Pixels of a `width` x `height` frame.
    Pixel { width: u32, height: u32 },
}

impl Space {
    fn extent(self) -> (f64, f64) {
        match self {
            Space::Normalized => (1.0, 1.0),
            Space::Pixel { width, height } => (f64::from(width), f64::from(height)),
        }
    }
}

/// Axis-aligned box in corner form.
///
/// Construction rejects degenerate boxes and coordinates outside the extent
/// of the box's [`Space`], so every `BBox` in circulation is valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    space: Space,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, space: Space) -> Result<Self, GeometryError> {
        let invalid = |reason| GeometryError::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(invalid("min corner must be strictly below max corner"));
        }
        if let Space::Pixel { width, height } = space {
            if width == 0 || height == 0 {
                return Err(GeometryError::InvalidDimensions { width, height });
            }
        }
        let (w, h) = space.extent();
        if x_min < 0.0 || y_min < 0.0 || x_max > w || y_max > h {
            return Err(invalid("coordinate outside the frame"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            space,
        })
    }

    pub fn normalized(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        Self::new(x_min, y_min, x_max, y_max, Space::Normalized)
    }

    pub fn pixel(x_min: f64, y_min: f64, x_max: f64, y_max: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(x_min, y_min, x_max, y_max, Space::Pixel { width, height })
    }

    /// Clamps the corners into the frame of `space` and builds a box; `None`
    /// when nothing of positive area is left.
    pub fn clipped(x_min: f64, y_min: f64, x_max: f64, y_max: f64, space: Space) -> Option<Self> {
        let (w, h) = space.extent();
        let x0 = x_min.clamp(0.0, w);
        let y0 = y_min.clamp(0.0, h);
        let x1 = x_max.clamp(0.0, w);
        let y1 = y_max.clamp(0.0, h);
        Self::new(x0, y0, x1, y1, space).ok()
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn space(&self) -> Space {
        self.space
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area shared with `other`; 0 when disjoint. Spaces are not checked.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Re-expresses the box in `target`.
    pub fn convert(&self, target: Space) -> Result<BBox, GeometryError> {
        for space in [self.space, target] {
            if let Space::Pixel { width, height } = space {
                if width == 0 || height == 0 {
                    return Err(GeometryError::InvalidDimensions { width, height });
                }
            }
        }
        if self.space == target {
            return Ok(*self);
        }
        let (sw, sh) = self.space.extent();
        let (tw, th) = target.extent();
        let fx = |v: f64| (v / sw * tw).clamp(0.0, tw);
        let fy = |v: f64| (v / sh * th).clamp(0.0, th);
        BBox::new(fx(self.x_min), fy(self.y_min), fx(self.x_max), fy(self.y_max), target)
    }
}

// Deserialization goes through `new` so invalid boxes never enter via serde.
impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x_min: f64,
            y_min: f64,
            x_max: f64,
            y_max: f64,
            space: Space,
        }
        let raw = Raw::deserialize(deserializer)?;
        BBox::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max, raw.space).map_err(serde::de::Error::custom)
    }
}

/// One detector output: a box, its label and a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub label: ObjectLabel,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, label: ObjectLabel, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidConfidence(confidence));
        }
        Ok(Self {
            bbox,
            label,
            confidence,
        })
    }
}

/// Intersection over union of two boxes in the same space.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    if a.space != b.space {
        return Err(GeometryError::SpaceMismatch(a.space, b.space));
    }
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Ordering used by NMS: confidence descending, then label, `x_min`, `y_min`.
pub fn detection_priority(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.label.cmp(&b.label))
        .then_with(|| a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then_with(|| a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Greedy per-label non-maximum suppression.
///
/// A detection survives iff its IoU with every already kept detection of the
/// same label is at most `iou_threshold`. All detections are assumed to share
/// one coordinate space. Output is in [`detection_priority`] order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut ordered = detections.to_vec();
    ordered.sort_by(detection_priority);

    let mut kept: Vec<Detection> = Vec::with_capacity(ordered.len());
    for det in ordered {
        let suppressed = kept
            .iter()
            .filter(|k| k.label == det.label)
            .any(|k| iou_unchecked(&k.bbox, &det.bbox) > iou_threshold);
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::normalized(x0, y0, x1, y1).unwrap()
    }

    fn pb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::pixel(x0, y0, x1, y1, 100, 100).unwrap()
    }

    fn det(b: BBox, label: ObjectLabel, c: f64) -> Detection {
        Detection::new(b, label, c).unwrap()
    }

    #[test]
    fn iou_identity() {
        let a = pb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(iou(&pb(0.0, 0.0, 1.0, 1.0), &pb(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // intersection 2, union 4 + 4 - 2 = 6
        let v = iou(&pb(0.0, 0.0, 2.0, 2.0), &pb(1.0, 0.0, 3.0, 2.0)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_touching_edges_is_zero() {
        assert_eq!(iou(&pb(0.0, 0.0, 1.0, 1.0), &pb(1.0, 0.0, 2.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn iou_space_mismatch() {
        let err = iou(&nb(0.0, 0.0, 0.5, 0.5), &pb(0.0, 0.0, 5.0, 5.0)).unwrap_err();
        assert!(matches!(err, GeometryError::SpaceMismatch(..)));
    }

    #[test]
    fn rejects_degenerate_and_out_of_frame() {
        assert!(BBox::normalized(0.5, 0.1, 0.5, 0.2).is_err());
        assert!(BBox::normalized(0.1, 0.1, 1.2, 0.2).is_err());
        assert!(BBox::pixel(0.0, 0.0, 101.0, 5.0, 100, 100).is_err());
        assert!(BBox::normalized(f64::NAN, 0.0, 0.2, 0.2).is_err());
        assert!(matches!(
            BBox::pixel(0.0, 0.0, 1.0, 1.0, 0, 10),
            Err(GeometryError::InvalidDimensions { .. })
        ));
    }

    #[test]
    fn convert_examples() {
        let p = nb(0.25, 0.25, 0.75, 0.75)
            .convert(Space::Pixel { width: 100, height: 100 })
            .unwrap();
        assert_eq!(p.corners(), [25.0, 25.0, 75.0, 75.0]);

        let n = BBox::pixel(0.0, 0.0, 100.0, 50.0, 100, 50)
            .unwrap()
            .convert(Space::Normalized)
            .unwrap();
        assert_eq!(n.corners(), [0.0, 0.0, 1.0, 1.0]);

        let b = nb(0.3, 0.1, 0.9, 0.4);
        let back = b
            .convert(Space::Pixel { width: 1920, height: 1080 })
            .unwrap()
            .convert(Space::Normalized)
            .unwrap();
        for (x, y) in b.corners().iter().zip(back.corners()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn convert_rejects_zero_dims() {
        let err = nb(0.1, 0.1, 0.2, 0.2)
            .convert(Space::Pixel { width: 0, height: 5 })
            .unwrap_err();
        assert!(matches!(err, GeometryError::InvalidDimensions { .. }));
    }

    #[test]
    fn nms_empty() {
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn nms_suppresses_same_label() {
        let a = det(pb(0.0, 0.0, 10.0, 10.0), ObjectLabel::Barge, 0.9);
        let b = det(pb(1.0, 1.0, 11.0, 11.0), ObjectLabel::Barge, 0.8);
        // 81 / 119
        assert!((iou(&a.bbox, &b.bbox).unwrap() - 81.0 / 119.0).abs() < 1e-15);
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
    }

    #[test]
    fn nms_is_per_label() {
        let a = det(pb(0.0, 0.0, 10.0, 10.0), ObjectLabel::Barge, 0.9);
        let b = det(pb(1.0, 1.0, 11.0, 11.0), ObjectLabel::VesselWithoutBarge, 0.8);
        assert_eq!(nms(&[b, a], 0.5), vec![a, b]);
    }

    #[test]
    fn nms_tie_break_is_deterministic() {
        let a = det(pb(5.0, 0.0, 15.0, 10.0), ObjectLabel::Barge, 0.7);
        let b = det(pb(0.0, 0.0, 10.0, 10.0), ObjectLabel::Barge, 0.7);
        let c = det(pb(0.0, 0.0, 10.0, 10.0), ObjectLabel::VesselWithBarge, 0.7);
        let out = nms(&[a, b, c], 0.9);
        assert_eq!(out, vec![c, b, a]);
    }

    #[test]
    fn detection_rejects_bad_confidence() {
        assert!(Detection::new(pb(0.0, 0.0, 1.0, 1.0), ObjectLabel::Barge, 1.5).is_err());
    }

    #[test]
    fn bbox_deserialize_validates() {
        let ok: BBox = serde_json::from_str(r#"{"x_min":0.1,"y_min":0.1,"x_max":0.2,"y_max":0.3,"space":{"kind":"normalized"}}"#).unwrap();
        assert_eq!(ok.corners(), [0.1, 0.1, 0.2, 0.3]);
        let bad: Result<BBox, _> = serde_json::from_str(r#"{"x_min":0.3,"y_min":0.1,"x_max":0.2,"y_max":0.3,"space":{"kind":"normalized"}}"#);
        assert!(bad.is_err());
    }
}
