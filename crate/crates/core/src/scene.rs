//! Object labels and the per-frame scene classes derived from them.
//!
//! A frame's scene class only depends on which object labels are present,
//! never on how many boxes carry them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("unknown object label '{0}'")]
    UnknownLabel(String),
    #[error("unknown scene class '{0}'")]
    UnknownScene(String),
    #[error("label index {0} is not in the label map")]
    UnknownIndex(usize),
    #[error("label map must list each of the {expected} object labels exactly once, got {got:?}")]
    BadLabelMap { expected: usize, got: Vec<String> },
}

/// What a detector (or an annotator) can put a box around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLabel {
    /// Towboat or tug pushing barges.
    VesselWithBarge,
    /// Self-propelled craft with nothing in tow.
    VesselWithoutBarge,
    Barge,
}

impl ObjectLabel {
    pub const ALL: [ObjectLabel; 3] = [
        ObjectLabel::VesselWithBarge,
        ObjectLabel::VesselWithoutBarge,
        ObjectLabel::Barge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectLabel::VesselWithBarge => "vessel_with_barge",
            ObjectLabel::VesselWithoutBarge => "vessel_without_barge",
            ObjectLabel::Barge => "barge",
        }
    }
}

impl fmt::Display for ObjectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s.trim())
            .ok_or_else(|| LabelError::UnknownLabel(s.to_string()))
    }
}

/// Class index <-> label mapping used by label files and model outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ObjectLabel>", into = "Vec<ObjectLabel>")]
pub struct LabelMap {
    labels: Vec<ObjectLabel>,
}

impl Default for LabelMap {
    /// `0 = vessel_with_barge, 1 = vessel_without_barge, 2 = barge`.
    fn default() -> Self {
        Self {
            labels: ObjectLabel::ALL.to_vec(),
        }
    }
}

impl LabelMap {
    pub fn new(labels: Vec<ObjectLabel>) -> Result<Self, LabelError> {
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() || labels.len() != ObjectLabel::ALL.len() {
            return Err(LabelError::BadLabelMap {
                expected: ObjectLabel::ALL.len(),
                got: labels.iter().map(|l| l.to_string()).collect(),
            });
        }
        Ok(Self { labels })
    }

    /// Parses a class-names file: one label name per line, line order = index.
    pub fn from_names(text: &str) -> Result<Self, LabelError> {
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(labels)
    }

    pub fn label(&self, index: usize) -> Result<ObjectLabel, LabelError> {
        self.labels.get(index).copied().ok_or(LabelError::UnknownIndex(index))
    }

    pub fn index(&self, label: ObjectLabel) -> usize {
        self.labels
            .iter()
            .position(|l| *l == label)
            .expect("label map holds every label")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ObjectLabel] {
        &self.labels
    }
}

impl TryFrom<Vec<ObjectLabel>> for LabelMap {
    type Error = LabelError;
    fn try_from(v: Vec<ObjectLabel>) -> Result<Self, Self::Error> {
        LabelMap::new(v)
    }
}

impl From<LabelMap> for Vec<ObjectLabel> {
    fn from(m: LabelMap) -> Self {
        m.labels
    }
}

/// Scene class of a single frame.
///
/// `F` (towing vessel seen, no barge seen) never occurs in valid ground
/// truth; it only shows up as a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SceneClass {
    /// No vessel, no barge.
    A,
    /// Vessel without barge, no barge.
    B,
    /// Vessel without barge, barge present.
    C,
    /// Vessel with barge, barge present.
    D,
    /// Barge only.
    E,
    /// Vessel with barge but no barge.
    F,
}

impl SceneClass {
    pub const ALL: [SceneClass; 6] = [
        SceneClass::A,
        SceneClass::B,
        SceneClass::C,
        SceneClass::D,
        SceneClass::E,
        SceneClass::F,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn description(self) -> &'static str {
        match self {
            SceneClass::A => "No detection (no vessel, no barge)",
            SceneClass::B => "Vessel without barge, no barge",
            SceneClass::C => "Vessel without barge, barge",
            SceneClass::D => "Vessel with barge, barge",
            SceneClass::E => "Barge only",
            SceneClass::F => "Vessel with barge, no barge",
        }
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for SceneClass {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(SceneClass::A),
            "B" | "b" => Ok(SceneClass::B),
            "C" | "c" => Ok(SceneClass::C),
            "D" | "d" => Ok(SceneClass::D),
            "E" | "e" => Ok(SceneClass::E),
            "F" | "f" => Ok(SceneClass::F),
            other => Err(LabelError::UnknownScene(other.to_string())),
        }
    }
}

/// Maps the set of labels present in a frame to its scene class.
///
/// Precedence for mixed scenes is D > F > C > B > E > A.
pub fn classify_scene<I>(labels: I) -> SceneClass
where
    I: IntoIterator<Item = ObjectLabel>,
{
    let (mut towing, mut free, mut barge) = (false, false, false);
    for label in labels {
        match label {
            ObjectLabel::VesselWithBarge => towing = true,
            ObjectLabel::VesselWithoutBarge => free = true,
            ObjectLabel::Barge => barge = true,
        }
    }
    match (towing, free, barge) {
        (true, _, true) => SceneClass::D,
        (true, _, false) => SceneClass::F,
        (false, true, true) => SceneClass::C,
        (false, true, false) => SceneClass::B,
        (false, false, true) => SceneClass::E,
        (false, false, false) => SceneClass::A,
    }
}

/// Scene class implied by a record's annotations; background images are `A`.
pub fn ground_truth_scene(record: &ImageRecord) -> SceneClass {
    let scene = classify_scene(record.annotations.iter().map(|a| a.label));
    if scene == SceneClass::F {
        log::warn!(
            "record {} has a towing vessel but no barge annotated; ground truth maps to class F",
            record.id
        );
    }
    scene
}
