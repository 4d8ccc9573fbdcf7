use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use bargewatch_core::dataset::RecordFilter;
use bargewatch_core::detector::PredictionSet;
use bargewatch_core::evalsuite::{self, metrics_from_confusion, scene_confusion, MetricsReport};
use bargewatch_core::SceneClass;
use serde::Deserialize;

use super::{emit, load_manifest, write_file};
use crate::{CliError, EvaluateArgs, Format, ManifestArgs};

/// Header of a scene-pairs CSV.
const PAIRS_HEADER: &str = "image_id,observed,predicted";

#[derive(Debug, Deserialize)]
struct PairRow {
    image_id: String,
    observed: String,
    predicted: String,
}

fn is_pairs_csv(path: &Path) -> Result<bool, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut first = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| CliError::io(path, e))?;
    Ok(first.trim_start_matches('\u{feff}').trim() == PAIRS_HEADER)
}

/// Reads `image_id,observed,predicted` rows. Ids must be unique and both
/// scene columns filled.
fn read_pairs(path: &Path) -> Result<Vec<(String, SceneClass, SceneClass)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<PairRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CliError::Invalid(format!("{}:{line}: {e}", path.display())))?;
        if !seen.insert(row.image_id.clone()) {
            return Err(CliError::Invalid(format!(
                "{}:{line}: duplicate image id {}",
                path.display(),
                row.image_id
            )));
        }
        let parse = |column: &str, value: &str| {
            if value.is_empty() {
                return Err(CliError::Invalid(format!(
                    "{}:{line}: image {} has no {column} scene",
                    path.display(),
                    row.image_id
                )));
            }
            value
                .parse::<SceneClass>()
                .map_err(|e| CliError::Invalid(format!("{}:{line}: {e}", path.display())))
        };
        let observed = parse("observed", &row.observed)?;
        let predicted = parse("predicted", &row.predicted)?;
        rows.push((row.image_id, observed, predicted));
    }
    Ok(rows)
}

/// Observed scenes from `gt`, predicted scenes from `pred` (or from `gt`
/// itself), joined by image id.
fn join_pairs(gt: &Path, pred: Option<&Path>) -> Result<Vec<(SceneClass, SceneClass)>, CliError> {
    let truth = read_pairs(gt)?;
    let Some(pred) = pred else {
        return Ok(truth.into_iter().map(|(_, o, p)| (o, p)).collect());
    };
    if !is_pairs_csv(pred)? {
        return Err(CliError::Invalid(format!(
            "{} is a scene-pair file, so --pred must be one too",
            gt.display()
        )));
    }
    let predicted: HashMap<String, SceneClass> = read_pairs(pred)?.into_iter().map(|(id, _, p)| (id, p)).collect();
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(truth.len());
    for (id, observed, _) in truth {
        match predicted.get(&id) {
            Some(&p) => pairs.push((observed, p)),
            None => missing.push(id),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} has no prediction for {} image(s): {}",
            pred.display(),
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(pairs)
}

pub fn evaluate(args: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut reports = if is_pairs_csv(&args.gt)? {
        if !args.slice.is_empty() {
            return Err(CliError::Invalid("--slice needs a manifest as ground truth".into()));
        }
        vec![metrics_from_confusion(&scene_confusion(join_pairs(&args.gt, args.pred.as_deref())?))]
    } else {
        let pred = args
            .pred
            .as_deref()
            .ok_or_else(|| CliError::Invalid("--pred is required with a manifest".into()))?;
        evaluate_manifest(&args, pred)?
    };
    if let Some(secs) = args.elapsed_seconds {
        let overall = &mut reports[0];
        overall.throughput_fps = Some(evalsuite::throughput(overall.total, secs)?);
    }
    let text = match args.format {
        Format::Table => reports.iter().map(MetricsReport::render_table).collect::<Vec<_>>().join("\n"),
        Format::Json if reports.len() == 1 => reports[0].to_json(),
        Format::Json => serde_json::to_string_pretty(&reports).expect("reports serialize"),
    };
    match &args.out {
        Some(path) => write_file(path, &text),
        None => emit(out, &text),
    }
}

fn evaluate_manifest(args: &EvaluateArgs, pred: &Path) -> Result<Vec<MetricsReport>, CliError> {
    let manifest = load_manifest(&ManifestArgs {
        manifest: args.gt.clone(),
        labels: args.labels.clone(),
    })?;
    let predictions = PredictionSet::load(pred)?;
    let filters = args
        .slice
        .iter()
        .map(|s| s.parse::<RecordFilter>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = vec![evalsuite::evaluate_records(&manifest.records, &predictions, args.iou)?];
    for filter in filters {
        let description = filter.to_string();
        reports.push(evalsuite::slice_eval(
            &manifest,
            &predictions,
            &description,
            |r| filter.matches(r),
            args.iou,
        )?);
    }
    Ok(reports)
}
