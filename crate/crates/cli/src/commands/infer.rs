use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use bargewatch_core::detector::{self, DetectorConfig, DetectorError, PredictionSet};
use bargewatch_core::scene::{classify_scene, ObjectLabel};
use bargewatch_core::Frame;
use bargewatch_monitor::config::DetectorSettings;
use bargewatch_monitor::pipeline::build_backend;
use serde_json::json;

use super::{emit, file_stem, image_files, label_map};
use crate::{ClassifyArgs, CliError, DetectArgs, Format, ManifestArgs};

pub fn detect(args: DetectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let inputs: Vec<(String, PathBuf)> = match (&args.manifest, &args.images) {
        (Some(manifest), _) => {
            let m = super::load_manifest(&ManifestArgs {
                manifest: manifest.clone(),
                labels: args.labels.clone(),
            })?;
            m.records.into_iter().map(|r| (r.id, r.path)).collect()
        }
        (None, Some(dir)) => image_files(dir)?.into_iter().map(|p| (file_stem(&p), p)).collect(),
        (None, None) => unreachable!("clap requires --manifest or --images"),
    };
    let settings = match (&args.fixture, &args.model) {
        (Some(fixture), _) => DetectorSettings::Stub {
            fixture: fixture.clone(),
        },
        (None, Some(model)) => {
            let defaults = DetectorConfig::default();
            let config = DetectorConfig {
                model_path: Some(model.clone()),
                input_size: args.input_size.unwrap_or(defaults.input_size),
                confidence_threshold: args.conf.unwrap_or(defaults.confidence_threshold),
                nms_iou_threshold: args.nms_iou.unwrap_or(defaults.nms_iou_threshold),
                label_map: label_map(args.labels.as_deref())?,
            };
            config.validate()?;
            DetectorSettings::Onnx(config)
        }
        (None, None) => unreachable!("clap requires --fixture or --model"),
    };
    let mut backend = build_backend(&settings)?;

    let mut predictions = PredictionSet::default();
    let started = Instant::now();
    for (id, path) in &inputs {
        let image = image::open(path).map_err(|e| CliError::io(path, e))?.to_rgb8();
        let frame = Frame::new(id.clone(), image);
        let dets = detector::detect(backend.as_mut(), &frame)?;
        predictions.insert(id.clone(), &dets).map_err(DetectorError::Geometry)?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed > 0.0 && !inputs.is_empty() {
        log::info!("{} images in {elapsed:.3} s ({:.1} fps)", inputs.len(), inputs.len() as f64 / elapsed);
    }
    eprintln!("detected {} images with the {} backend", inputs.len(), settings.name());

    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            predictions.save(path)?;
            Ok(())
        }
        None => emit(out, &serde_json::to_string_pretty(&predictions).expect("prediction set serializes")),
    }
}

pub fn classify(args: ClassifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows: Vec<(String, Vec<ObjectLabel>)> = match (&args.pred, &args.objects) {
        (Some(path), _) => PredictionSet::load(path)?
            .images
            .into_iter()
            .map(|(id, dets)| (id, dets.iter().map(|d| d.label).collect()))
            .collect(),
        (None, Some(names)) => {
            let labels = names
                .iter()
                .filter(|n| !n.trim().is_empty())
                .map(|n| n.parse::<ObjectLabel>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            vec![("-".to_string(), labels)]
        }
        (None, None) => unreachable!("clap requires --pred or --objects"),
    };
    let classified: Vec<(String, bargewatch_core::SceneClass)> = rows
        .into_iter()
        .map(|(id, labels)| (id, classify_scene(labels)))
        .collect();
    let text = match args.format {
        Format::Table => classified
            .iter()
            .map(|(id, scene)| format!("{id}\t{scene}\t{}", scene.description()))
            .collect::<Vec<_>>()
            .join("\n"),
        Format::Json => serde_json::to_string_pretty(
            &classified
                .iter()
                .map(|(id, scene)| json!({ "image_id": id, "scene": scene }))
                .collect::<Vec<_>>(),
        )
        .expect("rows serialize"),
    };
    emit(out, &text)
}
