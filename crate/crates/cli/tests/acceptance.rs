//! Acceptance gate. Each primary criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bargewatch_core::augment::{apply, AugmentKind, AugmentSpec, Range, RotateParams};
use bargewatch_core::bgsub::{BackgroundModel, BgSubConfig};
use bargewatch_core::dataset::{
    stratified_group_split, Origin, Partition, SplitRatios, TestChildPolicy, TimeOfDay, Weather,
};
use bargewatch_core::detector::{FixtureDetection, PredictionSet};
use bargewatch_core::evalsuite::{
    match_detections, metrics_from_confusion, precision_recall_f1, throughput, transferability_protocol, ClassCounts,
    ConfusionMatrix,
};
use bargewatch_core::geometry::{detection_priority, iou, nms, BBox, Detection};
use bargewatch_core::scene::{ground_truth_scene, LabelMap};
use bargewatch_core::{classify_scene, DatasetManifest, GroundTruthBox, ImageRecord, ObjectLabel, SceneClass};
use bargewatch_monitor::config::{CameraConfig, DetectorSettings, SourceSpec};
use bargewatch_monitor::eventlog::{log_dates, log_path, read_events};
use bargewatch_monitor::server::{self, AppState};
use bargewatch_monitor::{Monitor, MonitorConfig, PassageEvent};
use chrono::{DateTime, TimeZone, Utc};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} ± {tol}"))
}

// ---------------------------------------------------------------- metrics

const TABLE5: [[usize; 6]; 6] = [
    [13, 0, 0, 0, 0, 0],
    [0, 12, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0],
    [0, 0, 0, 63, 3, 4],
    [0, 0, 0, 3, 17, 0],
    [0, 0, 0, 0, 0, 0],
];

fn table5_to_table4() -> Check {
    let started = Instant::now();
    let report = metrics_from_confusion(&ConfusionMatrix::from_rows(TABLE5));
    let elapsed = started.elapsed();
    ensure(report.total == 116, || format!("total {}", report.total))?;
    use SceneClass::*;
    for (class, f1_pct) in [(A, 100.0), (B, 100.0), (C, 100.0), (D, 92.6), (E, 85.0)] {
        close(report.class(class).f1 * 100.0, f1_pct, 0.05, &format!("F1 {class}"))?;
    }
    let macro_f1 = report.macro_f1.ok_or("no macro F1")? * 100.0;
    close(macro_f1, 95.5, 0.1, "macro F1")?;
    ensure(report.class(D).accuracy == Some(0.9), || format!("D accuracy {:?}", report.class(D).accuracy))?;
    ensure(report.class(E).accuracy == Some(0.85), || format!("E accuracy {:?}", report.class(E).accuracy))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "F1 D {:.1}, E {:.1}, macro {macro_f1:.1}; accuracy D 90%, E 85%; {elapsed:?}",
        report.class(D).f1 * 100.0,
        report.class(E).f1 * 100.0
    ))
}

fn prf_fixtures() -> Check {
    let (p, r, f1) = precision_recall_f1(ClassCounts::new(63, 3, 7));
    close(p, 0.9545, 0.00005, "precision")?;
    close(r, 0.900, 0.0005, "recall")?;
    close(f1, 0.926, 0.0005, "F1")?;
    let (pe, re, fe) = precision_recall_f1(ClassCounts::new(17, 3, 3));
    for v in [pe, re, fe] {
        close(v, 0.85, 1e-12, "class E")?;
    }
    ensure(precision_recall_f1(ClassCounts::new(0, 0, 0)) == (1.0, 1.0, 1.0), || "empty class".into())?;
    ensure(precision_recall_f1(ClassCounts::new(0, 5, 0)) == (0.0, 1.0, 0.0), || "only false positives".into())?;
    ensure(precision_recall_f1(ClassCounts::new(0, 0, 4)) == (1.0, 0.0, 0.0), || "only misses".into())?;
    // A class with no samples at all stays out of the macro average.
    let report = metrics_from_confusion(&ConfusionMatrix::from_rows(TABLE5));
    ensure(!report.class(SceneClass::F).in_macro, || "F counted in macro".into())?;
    Ok(format!("(63, 3, 7) -> ({p:.4}, {r:.3}, {f1:.3}); zero-denominator conventions hold"))
}

fn scene_truth_table() -> Check {
    // Bit 2: vessel with barge, bit 1: vessel without barge, bit 0: barge.
    let expected = ["A", "E", "B", "C", "F", "D", "F", "D"];
    let mut got = Vec::new();
    for mask in 0..8u8 {
        let mut labels = Vec::new();
        if mask & 4 != 0 {
            labels.push(ObjectLabel::VesselWithBarge);
        }
        if mask & 2 != 0 {
            labels.push(ObjectLabel::VesselWithoutBarge);
        }
        if mask & 1 != 0 {
            labels.push(ObjectLabel::Barge);
        }
        got.push(classify_scene(labels).to_string());
    }
    ensure(got == expected, || format!("got {got:?}"))?;
    Ok(got.join(","))
}

// --------------------------------------------------------------- geometry

const GRID: u32 = 24;

fn int_box(rng: &mut ChaCha8Rng) -> (u32, u32, u32, u32) {
    loop {
        let (a, c) = (rng.random_range(0..=GRID), rng.random_range(0..=GRID));
        let (b, d) = (rng.random_range(0..=GRID), rng.random_range(0..=GRID));
        if a != c && b != d {
            return (a.min(c), b.min(d), a.max(c), b.max(d));
        }
    }
}

fn to_bbox((x0, y0, x1, y1): (u32, u32, u32, u32)) -> BBox {
    BBox::pixel(x0.into(), y0.into(), x1.into(), y1.into(), GRID, GRID).unwrap()
}

/// IoU by counting covered unit cells.
fn raster_iou(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> f64 {
    let inside = |r: (u32, u32, u32, u32), x: u32, y: u32| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
    let (mut inter, mut union) = (0u32, 0u32);
    for y in 0..GRID {
        for x in 0..GRID {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += u32::from(ia && ib);
            union += u32::from(ia || ib);
        }
    }
    f64::from(inter) / f64::from(union)
}

/// The one subset where each detection, in priority order, is kept exactly
/// when no kept higher-priority detection of its label overlaps it above
/// `thr`. Found by trying every subset.
fn brute_force_nms(dets: &[Detection], thr: f64) -> Result<Vec<Detection>, String> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_priority);
    let n = sorted.len();
    let mut fixed = Vec::new();
    for mask in 0u32..(1 << n) {
        let member = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let suppressed = (0..i).any(|j| {
                member(j) && sorted[j].label == sorted[i].label && iou(&sorted[j].bbox, &sorted[i].bbox).unwrap() > thr
            });
            member(i) == !suppressed
        });
        if consistent {
            fixed.push(mask);
        }
    }
    ensure(fixed.len() == 1, || format!("{} suppression fixed points", fixed.len()))?;
    Ok((0..n).filter(|i| fixed[0] & (1 << i) != 0).map(|i| sorted[i]).collect())
}

fn geometry_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x10u64);
    for k in 0..10_000 {
        let (a, b) = (int_box(&mut rng), int_box(&mut rng));
        let got = iou(&to_bbox(a), &to_bbox(b)).map_err(|e| e.to_string())?;
        ensure(got == raster_iou(a, b), || format!("pair {k}: {a:?} {b:?} iou {got}"))?;
    }
    let sets = 2_000;
    for k in 0..sets {
        let n = rng.random_range(0..=6);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let label = [ObjectLabel::Barge, ObjectLabel::VesselWithBarge][rng.random_range(0..2)];
                let conf = f64::from(rng.random_range(1..=20u32)) / 20.0;
                Detection::new(to_bbox(int_box(&mut rng)), label, conf).unwrap()
            })
            .collect();
        let thr = f64::from(rng.random_range(0..=100u32)) / 100.0;
        ensure(nms(&dets, thr) == brute_force_nms(&dets, thr)?, || format!("nms set {k} differs"))?;
    }
    Ok(format!("10000 iou pairs exact, {sets} nms sets of <= 6 boxes"))
}

// --------------------------------------------------------------- matching

const MATCH_LABELS: [ObjectLabel; 2] = [ObjectLabel::Barge, ObjectLabel::VesselWithoutBarge];

fn optimal_tp(gt: &[GroundTruthBox], pred: &[Detection], thr: f64) -> usize {
    fn go(i: usize, gt: &[GroundTruthBox], pred: &[Detection], thr: f64, used: &mut [bool]) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, gt, pred, thr, used);
        for g in 0..gt.len() {
            if !used[g] && gt[g].label == pred[i].label && iou(&gt[g].bbox, &pred[i].bbox).unwrap() >= thr {
                used[g] = true;
                best = best.max(1 + go(i + 1, gt, pred, thr, used));
                used[g] = false;
            }
        }
        best
    }
    go(0, gt, pred, thr, &mut vec![false; gt.len()])
}

/// Ground truth on distinct cells of a 5x5 grid (so boxes never overlap),
/// predictions jittered around them or placed freely.
fn random_scene(rng: &mut ChaCha8Rng) -> (Vec<GroundTruthBox>, Vec<Detection>) {
    let mut cells: Vec<usize> = (0..25).collect();
    let n_gt = rng.random_range(0..=5);
    for i in 0..n_gt {
        let j = rng.random_range(i..25);
        cells.swap(i, j);
    }
    let gt: Vec<GroundTruthBox> = cells[..n_gt]
        .iter()
        .map(|&c| {
            let (x, y) = ((c % 5) as f64 * 0.2, (c / 5) as f64 * 0.2);
            let (w, h) = (rng.random_range(0.3..1.0), rng.random_range(0.3..1.0));
            GroundTruthBox {
                label: MATCH_LABELS[rng.random_range(0..2)],
                bbox: BBox::normalized(x, y, x + 0.2 * w, y + 0.2 * h).unwrap(),
            }
        })
        .collect();
    let n_pred = rng.random_range(0..=5);
    let pred = (0..n_pred)
        .map(|_| {
            let (dx, dy) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            let (w, h) = (rng.random_range(0.02..0.2), rng.random_range(0.02..0.2));
            let (x, y, label) = match gt.get(rng.random_range(0..gt.len().max(1))) {
                Some(g) if rng.random_bool(0.7) => (g.bbox.x_min() + dx, g.bbox.y_min() + dy, g.label),
                _ => (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8), MATCH_LABELS[rng.random_range(0..2)]),
            };
            let (x, y) = (x.clamp(0.0, 0.79), y.clamp(0.0, 0.79));
            let conf = f64::from(rng.random_range(1..=100u32)) / 100.0;
            Detection::new(BBox::normalized(x, y, x + w, y + h).unwrap(), label, conf).unwrap()
        })
        .collect();
    (gt, pred)
}

fn matching_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x20);
    let mut matched = 0;
    for k in 0..1_000 {
        let (gt, pred) = random_scene(&mut rng);
        let mut total = ClassCounts::default();
        for c in match_detections(&gt, &pred, 0.5).into_values() {
            total += c;
        }
        let best = optimal_tp(&gt, &pred, 0.5);
        ensure(total.tp == best, || format!("scene {k}: greedy {} vs optimal {best}", total.tp))?;
        ensure(total.fp + best == pred.len() && total.fn_ + best == gt.len(), || format!("scene {k}: fp/fn"))?;
        matched += best;
    }
    Ok(format!("1000 scenes, greedy tp equals optimal ({matched} matches)"))
}

// ------------------------------------------------------------------ split

fn record(id: String, location: &str, origin: Origin, labels: &[ObjectLabel]) -> ImageRecord {
    ImageRecord {
        path: PathBuf::from(format!("images/{id}.png")),
        id,
        location: location.into(),
        weather: Weather::Clear,
        time_of_day: TimeOfDay::Day,
        origin,
        annotations: labels
            .iter()
            .map(|&label| GroundTruthBox {
                label,
                bbox: BBox::normalized(0.1, 0.1, 0.5, 0.5).unwrap(),
            })
            .collect(),
    }
}

fn random_manifest(rng: &mut ChaCha8Rng) -> DatasetManifest {
    const LOCATIONS: [&str; 5] = ["ERB", "LRB", "SLA", "MRB", "CCB"];
    let mut records = Vec::new();
    for i in 0..rng.random_range(1..80) {
        let loc = LOCATIONS[rng.random_range(0..LOCATIONS.len())];
        let mask: u8 = rng.random_range(0..8);
        let labels: Vec<ObjectLabel> = (0..3).filter(|b| mask & (1 << b) != 0).map(|b| ObjectLabel::ALL[b]).collect();
        let id = format!("img{i:03}");
        for c in 0..rng.random_range(0..3) {
            records.push(record(
                format!("{id}_aug{c}"),
                loc,
                Origin::Augmented { parent_id: id.clone() },
                &labels,
            ));
        }
        records.push(record(id, loc, Origin::Original, &labels));
    }
    DatasetManifest::new(records, LabelMap::default()).unwrap()
}

/// Hamilton apportionment, written out independently of the library.
fn hamilton(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..weights.len()).collect();
    by_remainder.sort_by(|&a, &b| (quotas[b] - seats[b] as f64).total_cmp(&(quotas[a] - seats[a] as f64)));
    let short = total - seats.iter().sum::<usize>();
    for &i in &by_remainder[..short] {
        seats[i] += 1;
    }
    seats
}

fn split_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x30);
    let mut total_records = 0;
    for k in 0..500 {
        let m = random_manifest(&mut rng);
        let ratios = if k % 5 == 0 {
            SplitRatios::default()
        } else {
            let train = f64::from(rng.random_range(40..80u32)) / 100.0;
            let val = f64::from(rng.random_range(5..20u32)) / 100.0;
            SplitRatios::new(train, val, 1.0 - train - val).unwrap()
        };
        let seed = rng.random::<u64>();
        let s = stratified_group_split(&m, &ratios, seed, TestChildPolicy::default()).map_err(|e| e.to_string())?;
        let fail = |what: &str| format!("manifest {k}: {what}");

        let ids: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        let unique: HashSet<&String> = ids.iter().copied().collect();
        ensure(ids.len() == unique.len(), || fail("partitions overlap"))?;
        ensure(unique.len() == m.records.len(), || fail("partitions not exhaustive"))?;
        ensure(s.test.iter().all(|id| m.get(id).unwrap().origin.is_original()), || fail("augmented record in test"))?;
        for r in &m.records {
            if let Some(parent) = r.origin.parent_id() {
                let pair = (s.partition_of(parent).unwrap(), s.partition_of(&r.id).unwrap());
                ensure(
                    !matches!(pair, (Partition::Test, Partition::Train) | (Partition::Train, Partition::Test)),
                    || fail("parent/child leak between train and test"),
                )?;
            }
        }

        // Test: test share of all records, filled with originals. Validation:
        // train:val share of the originals left over.
        let originals = m.originals().count();
        let test_target = hamilton(m.records.len(), &[ratios.train, ratios.val, ratios.test])[2].min(originals);
        ensure(s.test.len().abs_diff(test_target) <= 1, || {
            fail(&format!("test {} vs target {test_target}", s.test.len()))
        })?;
        let val_originals = s.val.iter().filter(|id| m.get(id).unwrap().origin.is_original()).count();
        let val_target = hamilton(originals - s.test.len(), &[ratios.train, ratios.val])[1];
        ensure(val_originals.abs_diff(val_target) <= 1, || {
            fail(&format!("val originals {val_originals} vs target {val_target}"))
        })?;
        let train_originals = originals - s.test.len() - val_originals;
        ensure(train_originals.abs_diff(originals - s.test.len() - val_target) <= 1, || fail("train size"))?;

        // Per (location, scene) stratum, within one of the proportional quota.
        let mut strata: BTreeMap<(String, SceneClass), [usize; 3]> = BTreeMap::new();
        for r in m.originals() {
            let e = strata.entry((r.location.clone(), ground_truth_scene(r))).or_default();
            e[0] += 1;
            match s.partition_of(&r.id).unwrap() {
                Partition::Test => e[1] += 1,
                Partition::Validation => e[2] += 1,
                Partition::Train => {}
            }
        }
        let left = (originals - s.test.len()) as f64;
        for (key, [n, test, val]) in &strata {
            let test_quota = *n as f64 * s.test.len() as f64 / originals as f64;
            ensure((*test as f64 - test_quota).abs() < 1.0 + 1e-9, || fail(&format!("stratum {key:?} test {test}")))?;
            if left > 0.0 {
                let val_quota = (n - test) as f64 * val_originals as f64 / left;
                ensure((*val as f64 - val_quota).abs() < 1.0 + 1e-9, || fail(&format!("stratum {key:?} val {val}")))?;
            }
        }

        let again = stratified_group_split(&m, &ratios, seed, TestChildPolicy::default()).map_err(|e| e.to_string())?;
        ensure(again == s, || fail("not deterministic"))?;
        total_records += m.records.len();
    }
    Ok(format!("500 manifests ({total_records} records)"))
}

// ----------------------------------------------------------- augmentation

fn pattern(w: u32, h: u32, seed: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = x.wrapping_mul(31).wrapping_add(y.wrapping_mul(17)).wrapping_add(seed);
        Rgb([(v % 251) as u8, (v / 3 % 241) as u8, (v / 7 % 239) as u8])
    })
}

fn random_boxes(rng: &mut ChaCha8Rng) -> Vec<GroundTruthBox> {
    (0..rng.random_range(0..5))
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
            let (w, h) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
            GroundTruthBox {
                label: ObjectLabel::ALL[rng.random_range(0..3)],
                bbox: BBox::normalized(x, y, x + w, y + h).unwrap(),
            }
        })
        .collect()
}

fn augmentation_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x40);
    let hflip = AugmentSpec::new(AugmentKind::Hflip, 0);
    for k in 0..200 {
        let img = pattern(rng.random_range(1..40), rng.random_range(1..40), rng.random());
        let boxes = random_boxes(&mut rng);
        let (once, b1) = apply(&hflip, &img, &boxes).map_err(|e| e.to_string())?;
        let (twice, b2) = apply(&hflip, &once, &b1).map_err(|e| e.to_string())?;
        ensure(twice == img, || format!("hflip case {k}: pixels differ"))?;
        ensure(b2.len() == boxes.len(), || format!("hflip case {k}: box count"))?;
        for (a, b) in b2.iter().zip(&boxes) {
            let exact = a.bbox.corners().iter().zip(b.bbox.corners()).all(|(p, q)| (p - q).abs() < 1e-12);
            ensure(a.label == b.label && exact, || format!("hflip case {k}: box {a:?} vs {b:?}"))?;
        }
    }

    let photometric = [
        AugmentKind::GaussianBlur(Default::default()),
        AugmentKind::Saturation { factor: Range { min: 0.5, max: 1.5 } },
        AugmentKind::Brightness { offset: Range { min: -0.15, max: 0.15 } },
        AugmentKind::Exposure { gain: Range { min: 0.6, max: 1.4 } },
        AugmentKind::Noise { std_dev: Range { min: 1.0, max: 12.0 } },
        AugmentKind::Cutout(Default::default()),
        AugmentKind::Fog(Default::default()),
        AugmentKind::Rain(Default::default()),
    ];
    let geometric = [
        AugmentKind::Crop(Default::default()),
        AugmentKind::Hflip,
        AugmentKind::Scale(Default::default()),
        AugmentKind::Rotate(Default::default()),
        AugmentKind::Shear(Default::default()),
    ];
    let mut outputs = 0;
    for k in 0..50 {
        let img = pattern(48, 32, k);
        let boxes = random_boxes(&mut rng);
        for kind in photometric.iter().chain(&geometric) {
            let spec = AugmentSpec::new(kind.clone(), rng.random());
            let (_, out) = apply(&spec, &img, &boxes).map_err(|e| e.to_string())?;
            if photometric.contains(kind) {
                ensure(out == boxes, || format!("{kind:?} moved boxes"))?;
            }
            for b in &out {
                let [x0, y0, x1, y1] = b.bbox.corners();
                ensure(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0, || {
                    format!("{kind:?} produced {:?}", b.bbox)
                })?;
            }
            outputs += out.len();
        }
    }

    // 30 degrees counter-clockwise about the centre of a 200x100 frame. The
    // pixel box (20, 10)-(60, 30) has corners at (-80..-40, -40..-20) from
    // the centre; x' = x cos + y sin, y' = -x sin + y cos gives the envelope
    // x in [80 - 40 sqrt3, 90 - 20 sqrt3], y in [70 - 20 sqrt3, 90 - 10 sqrt3].
    let s3 = 3f64.sqrt();
    let want = [
        (80.0 - 40.0 * s3) / 200.0,
        (70.0 - 20.0 * s3) / 100.0,
        (90.0 - 20.0 * s3) / 200.0,
        (90.0 - 10.0 * s3) / 100.0,
    ];
    let rotate = AugmentSpec::new(
        AugmentKind::Rotate(RotateParams {
            min_degrees: 30.0,
            max_degrees: 30.0,
        }),
        0,
    );
    let input = [GroundTruthBox {
        label: ObjectLabel::Barge,
        bbox: BBox::normalized(0.1, 0.1, 0.3, 0.3).unwrap(),
    }];
    let (_, rotated) = apply(&rotate, &pattern(200, 100, 1), &input).map_err(|e| e.to_string())?;
    ensure(rotated.len() == 1, || "rotated box dropped".into())?;
    let got = rotated[0].bbox.corners();
    for (g, w) in got.iter().zip(want) {
        close(*g, w, 1e-9, "rotated corner")?;
    }
    Ok(format!("200 hflip round trips, {outputs} checked output boxes, rotation envelope {got:.4?}"))
}

// --------------------------------------------------- background subtraction

fn bgsub_properties() -> Check {
    // Closed form of the running average under a constant stream.
    let (w, h) = (4, 3);
    let mut worst: f64 = 0.0;
    for (alpha, start, value) in [(0.02, 10.0, 200u8), (0.1, 255.0, 0), (0.5, 0.0, 128), (0.37, 77.5, 31)] {
        let mut model = BackgroundModel::from_values(w, h, vec![start; (w * h * 3) as usize], alpha).map_err(|e| e.to_string())?;
        let frame = RgbImage::from_pixel(w, h, Rgb([value; 3]));
        for n in 1..=300 {
            model.update(&frame).map_err(|e| e.to_string())?;
            let want = (1.0 - alpha).powi(n) * (start - f64::from(value)).abs();
            for m in model.mean_values() {
                let err = ((m - f64::from(value)).abs() - want).abs();
                worst = worst.max(err);
                ensure(err <= 1e-9, || format!("alpha {alpha}, n {n}: error {err}"))?;
            }
        }
    }

    // A 20x20 bright blob crossing a static gradient over 50 frames.
    let config = BgSubConfig::default();
    let (w, h) = (240u32, 60u32);
    let background = RgbImage::from_fn(w, h, |x, y| Rgb([(20 + x / 2) as u8, (40 + y) as u8, (60 + (x + y) / 4) as u8]));
    let blob_at = |t: u32| (4 * t, 20u32);
    let frame_at = |t: u32| {
        let mut f = background.clone();
        let (bx, by) = blob_at(t);
        for y in by..by + 20 {
            for x in bx..(bx + 20).min(w) {
                f.put_pixel(x, y, Rgb([250, 250, 245]));
            }
        }
        f
    };
    let mut model = BackgroundModel::new(config.alpha).map_err(|e| e.to_string())?;
    model.update(&frame_at(0)).map_err(|e| e.to_string())?;
    let (mut hits, mut blob_pixels) = (0usize, 0usize);
    for t in 1..50 {
        let frame = frame_at(t);
        if t >= 10 {
            let mask = model.foreground_mask(&frame, config.tau).map_err(|e| e.to_string())?;
            let (bx, by) = blob_at(t);
            for y in by..by + 20 {
                for x in bx..(bx + 20).min(w) {
                    blob_pixels += 1;
                    hits += usize::from(mask.get_pixel(x, y).0[0] == 255);
                }
            }
        }
        model.update(&frame).map_err(|e| e.to_string())?;
    }
    let recall = hits as f64 / blob_pixels as f64;
    ensure(recall >= 0.9, || format!("blob recall {recall:.3}"))?;

    // Two water tints, the same vessel added on top, the same sensor noise.
    let (w, h) = (64u32, 40u32);
    let vessel = |x: u32, y: u32| -> i32 {
        if (20..44).contains(&x) && (15..25).contains(&y) {
            40 + ((x * 7 + y * 3) % 30) as i32
        } else {
            0
        }
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(0x50);
    let noise: Vec<Vec<i32>> = (0..31).map(|_| (0..w * h * 3).map(|_| noise_rng.random_range(-3..=3)).collect()).collect();
    let run = |tint: [i32; 3]| -> Result<RgbImage, String> {
        let frame = |t: usize, with_vessel: bool| {
            RgbImage::from_fn(w, h, |x, y| {
                let i = ((y * w + x) * 3) as usize;
                let v = if with_vessel { vessel(x, y) } else { 0 };
                Rgb([0, 1, 2].map(|c| (tint[c] + v + noise[t][i + c]) as u8))
            })
        };
        let mut model = BackgroundModel::new(0.05).map_err(|e| e.to_string())?;
        for t in 0..30 {
            model.update(&frame(t, false)).map_err(|e| e.to_string())?;
        }
        model.normalize(&frame(30, true)).map_err(|e| e.to_string())
    };
    let (a, b) = (run([40, 90, 110])?, run([110, 70, 45])?);
    let max_diff = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(p, q)| p.abs_diff(*q))
        .max()
        .unwrap_or(0);
    ensure(max_diff <= 2, || format!("tint outputs differ by {max_diff}/255"))?;
    Ok(format!("closed form error {worst:.1e}, blob recall {recall:.3}, tint difference {max_diff}/255"))
}

// ------------------------------------------------------------- monitoring

/// One scene per frame; debounced with 2 consecutive frames and a gap of 1
/// this gives D, D, D, D, B and drops the lone E.
const DAY: &str = "ADDAADDDAADADAADDABBAAEAA";
const CONFIDENCE: [f64; 5] = [0.61, 0.87, 0.74, 0.92, 0.55];

fn day_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap()
}

fn scene_labels(scene: char) -> &'static [ObjectLabel] {
    match scene {
        'A' => &[],
        'B' => &[ObjectLabel::VesselWithoutBarge],
        'D' => &[ObjectLabel::VesselWithBarge, ObjectLabel::Barge],
        'E' => &[ObjectLabel::Barge],
        other => panic!("scene {other} not used"),
    }
}

fn write_replay(dir: &Path) {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let mut fixture = PredictionSet::default();
    for (i, c) in DAY.chars().enumerate() {
        let id = format!("frame_{i:04}");
        RgbImage::from_pixel(32, 24, Rgb([(i * 9) as u8, 80, 160]))
            .save(frames.join(format!("{id}.png")))
            .unwrap();
        let dets = scene_labels(c)
            .iter()
            .enumerate()
            .map(|(k, &label)| FixtureDetection {
                label,
                bbox: [0.1 + 0.3 * k as f64, 0.2, 0.35 + 0.3 * k as f64, 0.6],
                confidence: CONFIDENCE[i % 5],
            })
            .collect();
        fixture.images.insert(id, dets);
    }
    fixture.save(&dir.join("predictions.json")).unwrap();
}

fn replay_config(dir: &Path, log_dir: &Path) -> MonitorConfig {
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
        start: Some(day_start()),
    });
    config.validate().unwrap();
    config
}

/// Events of [`DAY`] worked out by hand: (scene, first frame, last frame,
/// frames, peak confidence).
fn hand_simulated() -> Vec<PassageEvent> {
    let at = |i: i64| day_start() + chrono::Duration::seconds(5 * i);
    [
        (SceneClass::D, 1, 2, 2, 0.87),
        (SceneClass::D, 5, 7, 3, 0.87),
        (SceneClass::D, 10, 12, 2, 0.74),
        (SceneClass::D, 15, 16, 2, 0.87),
        (SceneClass::B, 18, 19, 2, 0.92),
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

fn fetch_daily(config: &MonitorConfig, monitor: &Monitor) -> Result<serde_json::Value, String> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let listener = rt.block_on(server::bind("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let addr = server::local_addr(&listener).map_err(|e| e.to_string())?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let serving = rt.spawn(server::serve(listener, AppState::new(config, monitor.board()), async move {
        let _ = rx.await;
    }));
    let url = format!("http://{addr}/cameras/erb/daily?date=2024-05-01");
    let body = std::thread::spawn(move || -> Result<serde_json::Value, String> {
        let mut resp = ureq::get(&url).call().map_err(|e| e.to_string())?;
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    })
    .join()
    .map_err(|_| "request thread panicked".to_string())?;
    let _ = tx.send(());
    rt.block_on(serving).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    body
}

fn monitoring_end_to_end() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_replay(dir.path());
    let mut logs = Vec::new();
    let mut last = None;
    for run in ["run_a", "run_b"] {
        let log_dir = dir.path().join(run);
        let config = replay_config(dir.path(), &log_dir);
        let monitor = Monitor::new(config.clone()).map_err(|e| e.to_string())?;
        let results = monitor.start().map_err(|e| e.to_string())?.wait();
        for (id, r) in &results {
            r.as_ref().map_err(|e| format!("camera {id}: {e}"))?;
        }
        let events = read_events(&log_dir, "erb", None, None).map_err(|e| e.to_string())?;
        ensure(events == hand_simulated(), || format!("{run}: events {events:?}"))?;
        logs.push(log_dir);
        last = Some((config, monitor));
    }
    let dates = log_dates(&logs[0], "erb").map_err(|e| e.to_string())?;
    ensure(dates == log_dates(&logs[1], "erb").map_err(|e| e.to_string())?, || "log files differ".into())?;
    for d in &dates {
        let a = std::fs::read(log_path(&logs[0], "erb", *d)).map_err(|e| e.to_string())?;
        let b = std::fs::read(log_path(&logs[1], "erb", *d)).map_err(|e| e.to_string())?;
        ensure(!a.is_empty() && a == b, || format!("log for {d} not byte-identical"))?;
    }
    let (config, monitor) = last.expect("two runs");
    let daily = fetch_daily(&config, &monitor)?;
    ensure(daily["vessel_count"] == 5, || format!("daily {daily}"))?;
    ensure(daily["pct_with_barges"] == 0.8, || format!("daily {daily}"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "5 events as simulated, byte-identical logs, daily vessel_count 5 pct 0.8, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

// ------------------------------------------------------------- throughput

fn throughput_check() -> Check {
    let fps = throughput(116, 3.41).map_err(|e| e.to_string())?;
    close(fps, 34.0, 0.1, "fps")?;
    Ok(format!("{fps:.2} fps"))
}

// --------------------------------------------------------- transferability

fn transferability() -> Check {
    let mut records = Vec::new();
    let mut n = 0;
    for (location, count) in [("ERB", 48), ("LRB", 55), ("SLA", 60), ("MRB", 142), ("CCB", 26)] {
        for _ in 0..count {
            let labels = [&[][..], &[ObjectLabel::VesselWithBarge, ObjectLabel::Barge][..]][n % 2];
            let id = format!("{location}_{n:03}");
            for c in 0..2 {
                records.push(record(format!("{id}_aug{c}"), location, Origin::Augmented { parent_id: id.clone() }, labels));
            }
            records.push(record(id, location, Origin::Original, labels));
            n += 1;
        }
    }
    let manifest = DatasetManifest::new(records, LabelMap::default()).map_err(|e| e.to_string())?;
    let (train, test) = transferability_protocol(&manifest, "CCB").map_err(|e| e.to_string())?;
    ensure(test.records.len() == 26, || format!("{} test records", test.records.len()))?;
    ensure(test.records.iter().all(|r| r.origin.is_original() && r.location == "CCB"), || "test has non-CCB or augmented records".into())?;
    let location: HashMap<&str, &str> = manifest.records.iter().map(|r| (r.id.as_str(), r.location.as_str())).collect();
    let derived = train
        .records
        .iter()
        .filter(|r| r.location == "CCB" || r.origin.parent_id().is_some_and(|p| location[p] == "CCB"))
        .count();
    ensure(derived == 0, || format!("{derived} holdout-derived records in train"))?;
    ensure(train.records.len() == 3 * (331 - 26), || format!("{} train records", train.records.len()))?;
    Ok(format!("26 test originals, {} train records, none from CCB", train.records.len()))
}

#[test]
fn primary_criteria() {
    let criteria: [Criterion; 11] = [
        ("confusion matrix to per-class and macro F1", table5_to_table4),
        ("precision/recall/F1 fixtures", prf_fixtures),
        ("scene truth table", scene_truth_table),
        ("geometry oracle (iou raster, nms brute force)", geometry_oracle),
        ("matching oracle (greedy vs optimal)", matching_oracle),
        ("split properties", split_properties),
        ("augmentation properties", augmentation_properties),
        ("background subtraction", bgsub_properties),
        ("monitoring end to end", monitoring_end_to_end),
        ("throughput", throughput_check),
        ("transferability holdout", transferability),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
