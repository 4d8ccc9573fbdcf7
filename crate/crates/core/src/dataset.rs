//! Image records, label files, manifests and the leakage-safe split.
//!
//! # Files
//!
//! *Label file*: one text file per image, one object per line,
//! `class_index x_center y_center width height` with all four coordinates
//! normalized to the image size. An empty or missing file marks a background
//! image.
//!
//! *Manifest*: newline-delimited JSON, one record per line:
//!
//! ```text
//! {"id":"erb_0001","path":"images/erb_0001.jpg","location":"ERB","weather":"clear","time_of_day":"day","origin":"original"}
//! {"id":"erb_0001_aug0","path":"images/erb_0001_aug0.png","location":"ERB","weather":"fog","time_of_day":"day","origin":"augmented","parent_id":"erb_0001"}
//! ```
//!
//! `labels` may name the label file explicitly; otherwise it is derived from
//! `path` by swapping an `images` directory component for `labels` and the
//! extension for `.txt`. Relative paths resolve against the manifest's
//! directory.
//!
//! *Split output*: `train.txt`, `val.txt`, `test.txt`, one record id per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeometryError};
use crate::scene::{ground_truth_scene, LabelError, LabelMap, ObjectLabel, SceneClass};

/// Slack allowed on label-file coordinates before they count as out of range.
const COORD_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed label line: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: class index {index} is not in the label map")]
    UnknownClass { line: usize, index: usize },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("{path}: {source}")]
    InLabelFile {
        path: PathBuf,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate record id '{0}'")]
    DuplicateId(String),
    #[error("augmented record '{id}' references missing or non-original parent '{parent}'")]
    MissingParent { id: String, parent: String },
    #[error("invalid split ratios {0:?}: must be non-negative, with positive train share, and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("invalid filter '{0}'")]
    InvalidFilter(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub label: ObjectLabel,
    /// Always in normalized space.
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Clear,
    Rain,
    Fog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeOfDay {
    Day,
    Night,
}

impl FromStr for Weather {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clear" => Ok(Weather::Clear),
            "rain" => Ok(Weather::Rain),
            "fog" => Ok(Weather::Fog),
            _ => Err(format!("unknown weather '{s}'")),
        }
    }
}

impl FromStr for TimeOfDay {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(TimeOfDay::Day),
            "night" => Ok(TimeOfDay::Night),
            _ => Err(format!("unknown time of day '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Origin {
    Original,
    Augmented { parent_id: String },
}

impl Origin {
    pub fn is_original(&self) -> bool {
        matches!(self, Origin::Original)
    }

    pub fn parent_id(&self) -> Option<&str> {
        match self {
            Origin::Original => None,
            Origin::Augmented { parent_id } => Some(parent_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    /// Camera location code such as `ERB` or `CCB`.
    pub location: String,
    pub weather: Weather,
    pub time_of_day: TimeOfDay,
    pub origin: Origin,
    /// Empty for background images.
    pub annotations: Vec<GroundTruthBox>,
}

impl ImageRecord {
    pub fn is_background(&self) -> bool {
        self.annotations.is_empty()
    }

    /// Label file location used when the manifest does not name one.
    pub fn default_label_path(image_path: &Path) -> PathBuf {
        let mut out = PathBuf::new();
        let comps: Vec<_> = image_path.components().collect();
        // Swap the last `images` directory component (not the file name).
        let swap_at = comps
            .iter()
            .take(comps.len().saturating_sub(1))
            .rposition(|c| matches!(c, Component::Normal(n) if *n == "images"));
        for (i, c) in comps.iter().enumerate() {
            if Some(i) == swap_at {
                out.push("labels");
            } else {
                out.push(c.as_os_str());
            }
        }
        out.set_extension("txt");
        out
    }
}

/// Wire form of one manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<PathBuf>,
    location: String,
    weather: Weather,
    time_of_day: TimeOfDay,
    origin: OriginKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginKind {
    Original,
    Augmented,
}

/// A set of image records plus the label map their label files use.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub label_map: LabelMap,
}

impl DatasetManifest {
    /// Builds a manifest, checking id uniqueness and parent references.
    pub fn new(records: Vec<ImageRecord>, label_map: LabelMap) -> Result<Self, DatasetError> {
        let mut originals = HashSet::new();
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
            if r.origin.is_original() {
                originals.insert(r.id.as_str());
            }
        }
        for r in &records {
            if let Some(parent) = r.origin.parent_id() {
                if !originals.contains(parent) {
                    return Err(DatasetError::MissingParent {
                        id: r.id.clone(),
                        parent: parent.to_string(),
                    });
                }
            }
        }
        let gt_f = records
            .iter()
            .filter(|r| ground_truth_scene(r) == SceneClass::F)
            .count();
        if gt_f > 0 {
            log::warn!("{gt_f} records have class F ground truth; the annotation set may be incomplete");
        }
        Ok(Self { records, label_map })
    }

    /// Reads a manifest file and every label file it references.
    pub fn load(path: &Path, label_map: LabelMap) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut records = Vec::new();
        for (i, line) in io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DatasetError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestLine = serde_json::from_str(&line).map_err(|e| DatasetError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            let origin = match (entry.origin, entry.parent_id) {
                (OriginKind::Original, None) => Origin::Original,
                (OriginKind::Augmented, Some(parent_id)) => Origin::Augmented { parent_id },
                (OriginKind::Original, Some(_)) => {
                    return Err(DatasetError::Manifest {
                        line: i + 1,
                        message: "original record must not carry parent_id".into(),
                    })
                }
                (OriginKind::Augmented, None) => {
                    return Err(DatasetError::Manifest {
                        line: i + 1,
                        message: "augmented record requires parent_id".into(),
                    })
                }
            };
            let label_rel = entry
                .labels
                .unwrap_or_else(|| ImageRecord::default_label_path(&entry.path));
            let label_path = base.join(&label_rel);
            let annotations = match fs::read_to_string(&label_path) {
                Ok(text) => parse_label_file(&text, &label_map).map_err(|e| DatasetError::InLabelFile {
                    path: label_path.clone(),
                    source: Box::new(e),
                })?,
                Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(DatasetError::io(&label_path, e)),
            };
            records.push(ImageRecord {
                id: entry.id,
                path: base.join(entry.path),
                location: entry.location,
                weather: entry.weather,
                time_of_day: entry.time_of_day,
                origin,
                annotations,
            });
        }
        Self::new(records, label_map)
    }

    /// Writes the manifest lines. Paths are written relative to `base` when
    /// they live below it.
    pub fn write_manifest(&self, path: &Path) -> Result<(), DatasetError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = String::new();
        for r in &self.records {
            let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
            let line = ManifestLine {
                id: r.id.clone(),
                path: rel(&r.path),
                labels: None,
                location: r.location.clone(),
                weather: r.weather,
                time_of_day: r.time_of_day,
                origin: if r.origin.is_original() {
                    OriginKind::Original
                } else {
                    OriginKind::Augmented
                },
                parent_id: r.origin.parent_id().map(str::to_string),
            };
            out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| DatasetError::io(path, e))
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn originals(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.origin.is_original())
    }

    /// Records satisfying `predicate`, in manifest order.
    pub fn filter<P>(&self, predicate: P) -> DatasetManifest
    where
        P: Fn(&ImageRecord) -> bool,
    {
        DatasetManifest {
            records: self.records.iter().filter(|r| predicate(r)).cloned().collect(),
            label_map: self.label_map.clone(),
        }
    }

    pub fn locations(&self) -> Vec<String> {
        let mut locs: Vec<_> = self.records.iter().map(|r| r.location.clone()).collect();
        locs.sort();
        locs.dedup();
        locs
    }
}

/// Parses one label file into normalized ground-truth boxes.
pub fn parse_label_file(text: &str, label_map: &LabelMap) -> Result<Vec<GroundTruthBox>, DatasetError> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let index: usize = fields[0].parse().map_err(|_| DatasetError::Parse {
            line,
            message: format!("class index '{}' is not a non-negative integer", fields[0]),
        })?;
        let mut vals = [0.0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f.parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("'{f}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Parse {
                    line,
                    message: format!("'{f}' is not finite"),
                });
            }
        }
        let label = label_map
            .label(index)
            .map_err(|_| DatasetError::UnknownClass { line, index })?;
        let [cx, cy, w, h] = vals;
        for (name, v) in [("x_center", cx), ("y_center", cy), ("width", w), ("height", h)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::Validation {
                    line,
                    message: format!("{name} {v} is outside [0, 1]"),
                });
            }
        }
        let corners = [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0];
        if corners.iter().any(|c| *c < -COORD_SLACK || *c > 1.0 + COORD_SLACK) {
            return Err(DatasetError::Validation {
                line,
                message: format!("box corners {corners:?} fall outside the image"),
            });
        }
        let [x0, y0, x1, y1] = corners.map(|c| c.clamp(0.0, 1.0));
        let bbox = BBox::normalized(x0, y0, x1, y1).map_err(|e: GeometryError| DatasetError::Validation {
            line,
            message: e.to_string(),
        })?;
        boxes.push(GroundTruthBox { label, bbox });
    }
    Ok(boxes)
}

/// Writes boxes in label-file form with six decimals.
pub fn emit_label_file(boxes: &[GroundTruthBox], label_map: &LabelMap) -> String {
    let mut out = String::new();
    for b in boxes {
        let [x0, y0, x1, y1] = b.bbox.corners();
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            label_map.index(b.label),
            (x0 + x1) / 2.0,
            (y0 + y1) / 2.0,
            x1 - x0,
            y1 - y0
        ));
    }
    out
}

/// Record predicate over the metadata fields, written `key=value[,key=value]`
/// with keys `location`, `weather`, `time_of_day` (alias `time`) and `origin`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<Weather>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_of_day: Option<TimeOfDay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<OriginKind>,
}

impl RecordFilter {
    pub fn matches(&self, r: &ImageRecord) -> bool {
        self.location.as_ref().is_none_or(|l| *l == r.location)
            && self.weather.is_none_or(|w| w == r.weather)
            && self.time_of_day.is_none_or(|t| t == r.time_of_day)
            && self.origin.is_none_or(|o| match o {
                OriginKind::Original => r.origin.is_original(),
                OriginKind::Augmented => !r.origin.is_original(),
            })
    }

    pub fn is_empty(&self) -> bool {
        *self == RecordFilter::default()
    }
}

impl FromStr for RecordFilter {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::InvalidFilter(s.to_string());
        let mut f = RecordFilter::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            let value = value.trim();
            match key.trim() {
                "location" => f.location = Some(value.to_string()),
                "weather" => f.weather = Some(value.parse().map_err(|_| bad())?),
                "time_of_day" | "time" => f.time_of_day = Some(value.parse().map_err(|_| bad())?),
                "origin" => {
                    f.origin = Some(match value {
                        "original" => OriginKind::Original,
                        "augmented" => OriginKind::Augmented,
                        _ => return Err(bad()),
                    })
                }
                _ => return Err(bad()),
            }
        }
        Ok(f)
    }
}

impl fmt::Display for RecordFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(l) = &self.location {
            parts.push(format!("location={l}"));
        }
        if let Some(w) = self.weather {
            parts.push(format!("weather={}", serde_json::to_value(w).unwrap().as_str().unwrap()));
        }
        if let Some(t) = self.time_of_day {
            parts.push(format!("time_of_day={}", serde_json::to_value(t).unwrap().as_str().unwrap()));
        }
        if let Some(o) = self.origin {
            parts.push(format!("origin={}", serde_json::to_value(o).unwrap().as_str().unwrap()));
        }
        if parts.is_empty() {
            f.write_str("all")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Where augmented children of test originals go. Test itself only ever
/// holds originals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestChildPolicy {
    /// Validation: no image derived from a test image is trained on.
    #[default]
    Validation,
    /// Train: more training data, at the cost of near-duplicates of test
    /// images in the training set.
    Train,
}

impl FromStr for TestChildPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "val" | "validation" => Ok(TestChildPolicy::Validation),
            "train" => Ok(TestChildPolicy::Train),
            other => Err(format!("unknown test-child policy '{other}' (expected val or train)")),
        }
    }
}

/// Train / validation / test shares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Self { train, val, test };
        let ok = [train, val, test].iter().all(|v| v.is_finite() && *v >= 0.0)
            && train > 0.0
            && ((train + val + test) - 1.0).abs() < 1e-9;
        if ok {
            Ok(r)
        } else {
            Err(DatasetError::InvalidRatios([train, val, test]))
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl FromStr for SplitRatios {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| DatasetError::InvalidRatios([f64::NAN; 3]))?;
        match vals.as_slice() {
            [a, b, c] => SplitRatios::new(*a, *b, *c),
            _ => Err(DatasetError::InvalidRatios([f64::NAN; 3])),
        }
    }
}

/// Partition of record ids. Lists keep manifest order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Non-fatal notes, e.g. strata too small to honour the ratios.
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        if self.train.iter().any(|i| i == id) {
            Some(Partition::Train)
        } else if self.val.iter().any(|i| i == id) {
            Some(Partition::Validation)
        } else if self.test.iter().any(|i| i == id) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    /// Writes `train.txt`, `val.txt` and `test.txt` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        for (name, ids) in [("train.txt", &self.train), ("val.txt", &self.val), ("test.txt", &self.test)] {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| DatasetError::io(&path, e))?;
            for id in ids {
                writeln!(f, "{id}").map_err(|e| DatasetError::io(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Largest-remainder (Hamilton) apportionment of `total` seats over
/// `weights`. Remainders equal within 1e-9 favour the later entry.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let rem = |i: usize| quotas[i] - seats[i] as f64;
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() < 1e-9 {
            b.cmp(&a)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        seats[i] += 1;
    }
    seats
}

/// Per-stratum test and validation quotas the split aims for.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumTarget {
    pub location: String,
    pub scene: SceneClass,
    pub originals: usize,
    /// Real-valued test quota.
    pub test_quota: f64,
    /// Real-valued validation quota over the stratum's non-test originals.
    pub val_quota: f64,
    pub test: usize,
    pub val: usize,
}

/// Manifest-level test size: the test share of the whole manifest
/// (augmented records included), filled with originals only.
fn test_total(n_records: usize, n_originals: usize, ratios: &SplitRatios) -> usize {
    if n_originals == 0 {
        return 0;
    }
    let mut t = largest_remainder(n_records, &ratios.as_array())[2].min(n_originals);
    if t == 0 && ratios.test > 0.0 {
        t = 1;
    }
    t
}

/// Computes the split quotas for each (location, scene) stratum of originals.
pub fn split_targets(manifest: &DatasetManifest, ratios: &SplitRatios) -> Vec<StratumTarget> {
    let mut strata: BTreeMap<(String, SceneClass), usize> = BTreeMap::new();
    for r in manifest.originals() {
        *strata.entry((r.location.clone(), ground_truth_scene(r))).or_default() += 1;
    }
    let n_originals: usize = strata.values().sum();
    let t_total = test_total(manifest.records.len(), n_originals, ratios);
    let sizes: Vec<f64> = strata.values().map(|&n| n as f64).collect();
    let tests = largest_remainder(t_total, &sizes);

    let remaining: Vec<usize> = strata.values().zip(&tests).map(|(n, t)| n - t).collect();
    let m_total: usize = remaining.iter().sum();
    let v_total = largest_remainder(m_total, &[ratios.train, ratios.val])[1];
    let vals = largest_remainder(v_total, &remaining.iter().map(|&m| m as f64).collect::<Vec<_>>());

    strata
        .into_iter()
        .enumerate()
        .map(|(i, ((location, scene), n))| StratumTarget {
            location,
            scene,
            originals: n,
            test_quota: if n_originals == 0 {
                0.0
            } else {
                n as f64 * t_total as f64 / n_originals as f64
            },
            val_quota: if m_total == 0 {
                0.0
            } else {
                remaining[i] as f64 * v_total as f64 / m_total as f64
            },
            test: tests[i],
            val: vals[i],
        })
        .collect()
}

/// Stratified, group-aware split.
///
/// Originals are stratified by (location, ground-truth scene). The test set
/// holds originals only and is sized at the test share of the whole
/// manifest. Remaining originals split between train and validation by the
/// train:val ratio. Augmented records follow their parent, except that
/// children of test originals go where `test_children` says.
pub fn stratified_group_split(
    manifest: &DatasetManifest,
    ratios: &SplitRatios,
    seed: u64,
    test_children: TestChildPolicy,
) -> Result<SplitAssignment, DatasetError> {
    let mut assignment = SplitAssignment::default();
    let targets = split_targets(manifest, ratios);

    let mut members: BTreeMap<(String, SceneClass), Vec<&str>> = BTreeMap::new();
    for r in manifest.originals() {
        members
            .entry((r.location.clone(), ground_truth_scene(r)))
            .or_default()
            .push(r.id.as_str());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partition: HashMap<&str, Partition> = HashMap::new();
    for target in &targets {
        let ids = members
            .get_mut(&(target.location.clone(), target.scene))
            .expect("targets are built from the same strata");
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        if target.originals < 3 {
            assignment.warnings.push(format!(
                "stratum ({}, {}) has {} original(s); assignment is best-effort",
                target.location, target.scene, target.originals
            ));
        }
        for (k, id) in ids.iter().enumerate() {
            let p = if k < target.test {
                Partition::Test
            } else if k < target.test + target.val {
                Partition::Validation
            } else {
                Partition::Train
            };
            partition.insert(id, p);
        }
    }

    for r in &manifest.records {
        let p = match r.origin.parent_id() {
            None => partition[r.id.as_str()],
            Some(parent) => match partition.get(parent) {
                Some(Partition::Validation) => Partition::Validation,
                Some(Partition::Train) => Partition::Train,
                Some(Partition::Test) => match test_children {
                    TestChildPolicy::Validation => Partition::Validation,
                    TestChildPolicy::Train => Partition::Train,
                },
                None => {
                    assignment
                        .warnings
                        .push(format!("augmented record {} has no parent in the manifest; placed in train", r.id));
                    Partition::Train
                }
            },
        };
        match p {
            Partition::Train => assignment.train.push(r.id.clone()),
            Partition::Validation => assignment.val.push(r.id.clone()),
            Partition::Test => assignment.test.push(r.id.clone()),
        }
    }
    for w in &assignment.warnings {
        log::warn!("{w}");
    }
    Ok(assignment)
}

/// Reads a split id-list file.
pub fn read_id_list(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}
