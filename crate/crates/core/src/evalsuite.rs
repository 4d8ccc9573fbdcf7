//! Detection matching, scene-level metrics and evaluation protocols.
//!
//! The headline F1 is a macro average over scene classes that have at least
//! one observed sample. Classes with no observations keep their row in the
//! report but do not enter the average.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest, GroundTruthBox, ImageRecord};
use crate::detector::{FixtureDetection, PredictionSet};
use crate::geometry::{iou_unchecked, Detection};
use crate::scene::{classify_scene, ground_truth_scene, ObjectLabel, SceneClass};

/// IoU needed for a prediction to count as finding a ground-truth box.
pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{} record(s) have no prediction: {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("prediction for '{id}' is invalid: {message}")]
    BadPrediction { id: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn is_empty(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    /// `(precision, recall, f1)`; see [`precision_recall_f1`].
    pub fn prf(&self) -> (f64, f64, f64) {
        precision_recall_f1(*self)
    }
}

impl std::ops::AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Precision, recall and F1.
///
/// A zero denominator yields 1.0 for precision or recall (nothing was
/// claimed, or nothing was there to find). F1 is 0.0 when both are 0.
pub fn precision_recall_f1(c: ClassCounts) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Per-label counts from greedy one-to-one matching.
///
/// Predictions are visited by confidence descending (input order on ties);
/// each takes the unmatched ground-truth box of its label with the highest
/// IoU at or above `iou_threshold`, the lowest ground-truth index winning
/// ties. Predictions in a different space are converted to the ground
/// truth's space first.
pub fn match_detections(
    gt: &[GroundTruthBox],
    pred: &[Detection],
    iou_threshold: f64,
) -> BTreeMap<ObjectLabel, ClassCounts> {
    let mut counts: BTreeMap<ObjectLabel, ClassCounts> = ObjectLabel::ALL.iter().map(|l| (*l, ClassCounts::default())).collect();
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].confidence.total_cmp(&pred[a].confidence));

    let mut taken = vec![false; gt.len()];
    for pi in order {
        let p = &pred[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.iter().enumerate() {
            if taken[gi] || g.label != p.label {
                continue;
            }
            let pb = if p.bbox.space() == g.bbox.space() {
                p.bbox
            } else {
                match p.bbox.convert(g.bbox.space()) {
                    Ok(b) => b,
                    Err(_) => continue,
                }
            };
            let v = iou_unchecked(&g.bbox, &pb);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        let c = counts.get_mut(&p.label).expect("all labels present");
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                c.tp += 1;
            }
            None => c.fp += 1,
        }
    }
    for (gi, g) in gt.iter().enumerate() {
        if !taken[gi] {
            counts.get_mut(&g.label).expect("all labels present").fn_ += 1;
        }
    }
    counts
}

/// Scene-class cross tabulation, rows observed and columns predicted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 6]; 6],
}

impl ConfusionMatrix {
    pub fn from_rows(counts: [[usize; 6]; 6]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, observed: SceneClass, predicted: SceneClass) {
        self.counts[observed.index()][predicted.index()] += 1;
    }

    pub fn get(&self, observed: SceneClass, predicted: SceneClass) -> usize {
        self.counts[observed.index()][predicted.index()]
    }

    pub fn row_sum(&self, observed: SceneClass) -> usize {
        self.counts[observed.index()].iter().sum()
    }

    pub fn col_sum(&self, predicted: SceneClass) -> usize {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> usize {
        (0..6).map(|k| self.counts[k][k]).sum()
    }

    /// Expands back into `(observed, predicted)` pairs, row-major.
    pub fn pairs(&self) -> Vec<(SceneClass, SceneClass)> {
        let mut out = Vec::with_capacity(self.total());
        for o in SceneClass::ALL {
            for p in SceneClass::ALL {
                out.extend(std::iter::repeat_n((o, p), self.get(o, p)));
            }
        }
        out
    }

    pub fn counts_for(&self, class: SceneClass) -> ClassCounts {
        let tp = self.get(class, class);
        ClassCounts::new(tp, self.col_sum(class) - tp, self.row_sum(class) - tp)
    }
}

pub fn scene_confusion<I>(pairs: I) -> ConfusionMatrix
where
    I: IntoIterator<Item = (SceneClass, SceneClass)>,
{
    let mut m = ConfusionMatrix::default();
    for (o, p) in pairs {
        m.add(o, p);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: SceneClass,
    pub counts: ClassCounts,
    /// Observed samples (row sum).
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Share of the class's observed samples predicted as that class.
    pub accuracy: Option<f64>,
    /// No observations and no predictions; p/r are 1.0 by convention.
    pub vacuous: bool,
    pub in_macro: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: ObjectLabel,
    pub counts: ClassCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice: Option<String>,
    pub total: usize,
    pub classes: Vec<ClassMetrics>,
    pub macro_f1: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<LabelMetrics>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput_fps: Option<f64>,
}

/// Mean of the values; `None` for an empty list.
pub fn macro_average(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn metrics_from_confusion(m: &ConfusionMatrix) -> MetricsReport {
    let mut classes = Vec::with_capacity(6);
    for class in SceneClass::ALL {
        let counts = m.counts_for(class);
        let support = m.row_sum(class);
        let (precision, recall, f1) = counts.prf();
        classes.push(ClassMetrics {
            class,
            counts,
            support,
            precision,
            recall,
            f1,
            accuracy: (support > 0).then(|| counts.tp as f64 / support as f64),
            vacuous: counts.is_empty(),
            in_macro: support > 0,
        });
    }
    let included: Vec<f64> = classes.iter().filter(|c| c.in_macro).map(|c| c.f1).collect();
    let total = m.total();
    let weighted_f1 = (total > 0).then(|| classes.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total as f64);
    MetricsReport {
        slice: None,
        total,
        macro_f1: macro_average(&included),
        weighted_f1,
        overall_accuracy: (total > 0).then(|| m.diagonal() as f64 / total as f64),
        classes,
        confusion: m.clone(),
        detections: None,
        throughput_fps: None,
    }
}

impl MetricsReport {
    pub fn class(&self, class: SceneClass) -> &ClassMetrics {
        &self.classes[class.index()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text rendering: per-class table, cross-classification matrix
    /// and the aggregate lines.
    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:.1}", v * 100.0);
        let opt = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "-".into());
        let mut s = String::new();
        if let Some(slice) = &self.slice {
            let _ = writeln!(s, "slice: {slice} ({} samples)", self.total);
        }
        let _ = writeln!(
            s,
            "{:<6}{:>8}{:>6}{:>6}{:>6}{:>11}{:>8}{:>8}{:>10}",
            "class", "support", "tp", "fp", "fn", "precision", "recall", "f1", "accuracy"
        );
        for c in &self.classes {
            let mark = if c.in_macro { "" } else { "*" };
            let _ = writeln!(
                s,
                "{:<6}{:>8}{:>6}{:>6}{:>6}{:>11}{:>8}{:>8}{:>10}",
                format!("{}{mark}", c.class),
                c.support,
                c.counts.tp,
                c.counts.fp,
                c.counts.fn_,
                pct(c.precision),
                pct(c.recall),
                pct(c.f1),
                opt(c.accuracy)
            );
        }
        let _ = writeln!(s, "(* no observed samples, excluded from macro F1)");
        let _ = writeln!(s);
        let _ = write!(s, "{:<10}", "obs\\pred");
        for p in SceneClass::ALL {
            let _ = write!(s, "{:>6}", p.to_string());
        }
        let _ = writeln!(s, "{:>8}{:>10}", "total", "accuracy");
        for o in SceneClass::ALL {
            let _ = write!(s, "{:<10}", o.to_string());
            for p in SceneClass::ALL {
                let _ = write!(s, "{:>6}", self.confusion.get(o, p));
            }
            let _ = writeln!(s, "{:>8}{:>10}", self.confusion.row_sum(o), opt(self.class(o).accuracy));
        }
        let _ = write!(s, "{:<10}", "total");
        for p in SceneClass::ALL {
            let _ = write!(s, "{:>6}", self.confusion.col_sum(p));
        }
        let _ = writeln!(s, "{:>8}{:>10}", self.total, opt(self.overall_accuracy));
        let _ = writeln!(s);
        let _ = writeln!(s, "macro F1:         {}", opt(self.macro_f1));
        let _ = writeln!(s, "weighted F1:      {}", opt(self.weighted_f1));
        let _ = writeln!(s, "overall accuracy: {}", opt(self.overall_accuracy));
        if let Some(dets) = &self.detections {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "{:<22}{:>6}{:>6}{:>6}{:>11}{:>8}{:>8}",
                "label", "tp", "fp", "fn", "precision", "recall", "f1"
            );
            for d in dets {
                let _ = writeln!(
                    s,
                    "{:<22}{:>6}{:>6}{:>6}{:>11}{:>8}{:>8}",
                    d.label.as_str(),
                    d.counts.tp,
                    d.counts.fp,
                    d.counts.fn_,
                    pct(d.precision),
                    pct(d.recall),
                    pct(d.f1)
                );
            }
        }
        if let Some(fps) = self.throughput_fps {
            let _ = writeln!(s, "throughput:       {fps:.1} fps");
        }
        s
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_table())
    }
}

fn fixture_detections(id: &str, entries: &[FixtureDetection]) -> Result<Vec<Detection>, EvalError> {
    entries
        .iter()
        .map(|e| e.to_detection(crate::geometry::Space::Normalized))
        .collect::<Result<_, _>>()
        .map_err(|e| EvalError::BadPrediction {
            id: id.to_string(),
            message: e.to_string(),
        })
}

/// Evaluates `records` against `predictions` at scene and box level.
///
/// Every record needs an entry in `predictions`, even if it is empty.
pub fn evaluate_records<'a, I>(records: I, predictions: &PredictionSet, iou_threshold: f64) -> Result<MetricsReport, EvalError>
where
    I: IntoIterator<Item = &'a ImageRecord>,
{
    let mut missing = Vec::new();
    let mut matrix = ConfusionMatrix::default();
    let mut det_counts: BTreeMap<ObjectLabel, ClassCounts> = BTreeMap::new();
    for record in records {
        let Some(entries) = predictions.get(&record.id) else {
            missing.push(record.id.clone());
            continue;
        };
        let dets = fixture_detections(&record.id, entries)?;
        matrix.add(ground_truth_scene(record), classify_scene(dets.iter().map(|d| d.label)));
        for (label, c) in match_detections(&record.annotations, &dets, iou_threshold) {
            *det_counts.entry(label).or_default() += c;
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }
    let mut report = metrics_from_confusion(&matrix);
    report.detections = Some(
        det_counts
            .into_iter()
            .map(|(label, counts)| {
                let (precision, recall, f1) = counts.prf();
                LabelMetrics {
                    label,
                    counts,
                    precision,
                    recall,
                    f1,
                }
            })
            .collect(),
    );
    Ok(report)
}

/// Metrics over the records matching `slicer`, tagged with `description`.
pub fn slice_eval<P>(
    manifest: &DatasetManifest,
    predictions: &PredictionSet,
    description: &str,
    slicer: P,
    iou_threshold: f64,
) -> Result<MetricsReport, EvalError>
where
    P: Fn(&ImageRecord) -> bool,
{
    let mut report = evaluate_records(manifest.records.iter().filter(|r| slicer(r)), predictions, iou_threshold)?;
    report.slice = Some(description.to_string());
    Ok(report)
}

/// Leave-one-location-out split.
///
/// Test holds the original records at `holdout`; train holds every record
/// elsewhere, augmented copies included. Augmented copies of holdout
/// originals go to neither side.
pub fn transferability_protocol(
    manifest: &DatasetManifest,
    holdout: &str,
) -> Result<(DatasetManifest, DatasetManifest), EvalError> {
    let location_of: HashMap<&str, &str> = manifest.records.iter().map(|r| (r.id.as_str(), r.location.as_str())).collect();
    let at_holdout = |r: &ImageRecord| {
        r.location == holdout
            || r
                .origin
                .parent_id()
                .is_some_and(|p| location_of.get(p).is_some_and(|l| *l == holdout))
    };
    let test = manifest.filter(|r| r.origin.is_original() && r.location == holdout);
    if test.records.is_empty() {
        return Err(EvalError::InvalidArgument(format!(
            "holdout location '{holdout}' has no original records (known: {})",
            manifest.locations().join(", ")
        )));
    }
    let train = manifest.filter(|r| !at_holdout(r));
    Ok((train, test))
}

/// Frames per second.
pub fn throughput(n_frames: usize, elapsed_seconds: f64) -> Result<f64, EvalError> {
    if !elapsed_seconds.is_finite() || elapsed_seconds <= 0.0 {
        return Err(EvalError::InvalidArgument(format!(
            "elapsed time must be positive, got {elapsed_seconds}"
        )));
    }
    Ok(n_frames as f64 / elapsed_seconds)
}
