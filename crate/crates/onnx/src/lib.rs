//! ONNX detector backend.
//!
//! # Model contract
//!
//! * One input, `float32[1, 3, S, S]`: RGB, channel-first, values in `[0, 1]`,
//!   letterboxed with gray 114 padding. `S` must equal the configured
//!   `input_size` (a dynamic `S` is pinned to it).
//! * One output, `float32[1, 4 + C, N]`: for each of `N` candidates, rows
//!   0-3 hold `cx, cy, w, h` in input pixels and rows `4..4 + C` hold
//!   per-class scores in `[0, 1]`, in label-map order.
//! * Metadata property `names` lists the `C` class names, either as a JSON
//!   array (`["vessel_with_barge", ...]`) or as an index map
//!   (`{0: 'vessel_with_barge', ...}`). It must match the configured label
//!   map. Optional `imgsz` (e.g. `[1216, 1216]`) must match `S`, and optional
//!   `task` must be `detect`.
//!
//! The checks run at load time so a mismatched model fails before the first
//! frame.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use bargewatch_core::detector::{
    decode, letterbox, BackendInfo, DetectorBackend, DetectorConfig, DetectorError, Frame, LetterboxMapping,
    RawPrediction,
};
use bargewatch_core::geometry::Detection;
use bargewatch_core::ObjectLabel;
use image::RgbImage;
use tract_onnx::pb;
use tract_onnx::prelude::*;

pub mod synthetic;

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxBackend {
    plan: Plan,
    config: DetectorConfig,
    path: PathBuf,
    num_candidates: Option<usize>,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("path", &self.path)
            .field("input_size", &self.config.input_size)
            .finish_non_exhaustive()
    }
}

fn load_err(path: &Path, message: impl std::fmt::Display) -> DetectorError {
    DetectorError::Load {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

impl OnnxBackend {
    /// Loads `config.model_path` and checks it against the contract.
    pub fn load(config: &DetectorConfig) -> Result<Self, DetectorError> {
        config.validate()?;
        let path = config
            .model_path
            .clone()
            .ok_or_else(|| DetectorError::InvalidConfig("model_path is required for the ONNX backend".into()))?;
        let bytes = std::fs::read(&path).map_err(|e| load_err(&path, e))?;
        Self::from_bytes(&bytes, config, path)
    }

    pub fn from_bytes(bytes: &[u8], config: &DetectorConfig, path: PathBuf) -> Result<Self, DetectorError> {
        config.validate()?;
        let onnx = tract_onnx::onnx();
        let proto = onnx
            .proto_model_for_read(&mut &bytes[..])
            .map_err(|e| load_err(&path, format!("not an ONNX model: {e}")))?;
        check_metadata(&proto, config).map_err(|m| load_err(&path, m))?;
        let num_candidates = check_graph_shapes(&proto, config).map_err(|m| load_err(&path, m))?;

        let s = config.input_size as usize;
        let plan = onnx
            .model_for_proto_model(&proto)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, s, s]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| load_err(&path, format!("{e:#}")))?;
        Ok(Self {
            plan,
            config: config.clone(),
            path,
            num_candidates,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    fn infer(&self, image: &RgbImage) -> Result<(Vec<RawPrediction>, LetterboxMapping), DetectorError> {
        let (w, h) = image.dimensions();
        let mapping = letterbox(w, h, self.config.input_size)?;
        let input = to_tensor(&mapping.apply(image));
        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| DetectorError::Inference(format!("{e:#}")))?;
        let out = outputs
            .first()
            .ok_or_else(|| DetectorError::Inference("model produced no output".into()))?;
        let view = out
            .to_plain_array_view::<f32>()
            .map_err(|e| DetectorError::Inference(format!("{e:#}")))?;
        let data: Vec<f32> = view.iter().copied().collect();
        let raw = raw_predictions(view.shape(), &data, self.config.label_map.len())?;
        Ok((raw, mapping))
    }
}

impl DetectorBackend for OnnxBackend {
    fn describe(&self) -> BackendInfo {
        BackendInfo {
            name: "onnx".into(),
            detail: format!(
                "{} (input {}x{}, {} candidates, conf {}, nms {})",
                self.path.display(),
                self.config.input_size,
                self.config.input_size,
                self.num_candidates.map_or_else(|| "dynamic".to_string(), |n| n.to_string()),
                self.config.confidence_threshold,
                self.config.nms_iou_threshold
            ),
        }
    }

    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectorError> {
        let (raw, mapping) = self.infer(&frame.image)?;
        let out = decode(&raw, &mapping, &self.config)?;
        if out.dropped_outside > 0 {
            log::debug!("{}: {} candidate(s) fell outside the frame", frame.id, out.dropped_outside);
        }
        Ok(out.detections)
    }
}

/// Channel-first `[1, 3, S, S]` tensor scaled to `[0, 1]`.
pub fn to_tensor(image: &RgbImage) -> Tensor {
    let (w, h) = image.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = image.as_raw();
    let mut data = vec![0f32; 3 * w * h];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = f32::from(px[c]) / 255.0;
        }
    }
    tract_ndarray::Array4::from_shape_vec((1, 3, h, w), data)
        .expect("shape matches buffer")
        .into()
}

/// Splits a `[1, 4 + C, N]` output into candidates with corner boxes.
pub fn raw_predictions(shape: &[usize], data: &[f32], num_classes: usize) -> Result<Vec<RawPrediction>, DetectorError> {
    let [1, rows, n] = shape else {
        return Err(DetectorError::Inference(format!("expected output shape [1, {}, N], got {shape:?}", 4 + num_classes)));
    };
    let (rows, n) = (*rows, *n);
    if rows != 4 + num_classes || data.len() != rows * n {
        return Err(DetectorError::Inference(format!(
            "expected output shape [1, {}, N], got {shape:?}",
            4 + num_classes
        )));
    }
    let at = |r: usize, j: usize| f64::from(data[r * n + j]);
    Ok((0..n)
        .map(|j| {
            let (cx, cy, w, h) = (at(0, j), at(1, j), at(2, j), at(3, j));
            RawPrediction {
                bbox: [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0],
                scores: (0..num_classes).map(|k| at(4 + k, j)).collect(),
            }
        })
        .collect())
}

/// Class names from a `names` metadata value.
pub fn parse_names(value: &str) -> Result<Vec<String>, String> {
    let v = value.trim();
    if v.starts_with('[') {
        let inner = v.trim_start_matches('[').trim_end_matches(']');
        return Ok(inner
            .split(',')
            .map(|s| s.trim().trim_matches(|c| c == '"' || c == '\'').to_string())
            .filter(|s| !s.is_empty())
            .collect());
    }
    if v.starts_with('{') {
        let inner = v.trim_start_matches('{').trim_end_matches('}');
        let mut entries = Vec::new();
        for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, name) = part.split_once(':').ok_or_else(|| format!("bad names entry '{part}'"))?;
            let k: usize = k
                .trim()
                .trim_matches(|c| c == '"' || c == '\'')
                .parse()
                .map_err(|_| format!("bad class index in '{part}'"))?;
            entries.push((k, name.trim().trim_matches(|c| c == '"' || c == '\'').to_string()));
        }
        entries.sort();
        if entries.iter().enumerate().any(|(i, (k, _))| i != *k) {
            return Err(format!("class indices in names are not 0..{}", entries.len()));
        }
        return Ok(entries.into_iter().map(|(_, n)| n).collect());
    }
    Err(format!("unrecognised names value '{v}'"))
}

fn metadata<'a>(proto: &'a pb::ModelProto, key: &str) -> Option<&'a str> {
    proto
        .metadata_props
        .iter()
        .find(|p| p.key == key)
        .map(|p| p.value.as_str())
}

fn check_metadata(proto: &pb::ModelProto, config: &DetectorConfig) -> Result<(), String> {
    let names = metadata(proto, "names").ok_or("model metadata lacks 'names'")?;
    let names = parse_names(names)?;
    let expected: Vec<&str> = config.label_map.labels().iter().map(|l| l.as_str()).collect();
    if names != expected {
        let parsed: Result<Vec<ObjectLabel>, _> = names.iter().map(|n| n.parse()).collect();
        return Err(match parsed {
            Ok(_) => format!("model class order {names:?} differs from label map {expected:?}"),
            Err(e) => format!("model classes {names:?} do not match the label set: {e}"),
        });
    }
    if let Some(task) = metadata(proto, "task") {
        if task.trim() != "detect" {
            return Err(format!("model task is '{task}', expected 'detect'"));
        }
    }
    if let Some(imgsz) = metadata(proto, "imgsz") {
        let dims: Vec<u32> = imgsz
            .trim_matches(|c: char| c == '[' || c == ']' || c.is_whitespace())
            .split(',')
            .map(|d| d.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("bad imgsz metadata '{imgsz}'"))?;
        if dims.iter().any(|&d| d != config.input_size) {
            return Err(format!("model imgsz {dims:?} differs from input_size {}", config.input_size));
        }
    }
    Ok(())
}

fn dims_of(info: &pb::ValueInfoProto) -> Option<Vec<Option<i64>>> {
    let Some(pb::type_proto::Value::TensorType(t)) = info.r#type.as_ref()?.value.as_ref() else {
        return None;
    };
    Some(
        t.shape
            .as_ref()?
            .dim
            .iter()
            .map(|d| match d.value {
                Some(pb::tensor_shape_proto::dimension::Value::DimValue(v)) => Some(v),
                _ => None,
            })
            .collect(),
    )
}

/// Checks declared input/output shapes; returns the static candidate count
/// when the model declares one.
fn check_graph_shapes(proto: &pb::ModelProto, config: &DetectorConfig) -> Result<Option<usize>, String> {
    let graph = proto.graph.as_ref().ok_or("model has no graph")?;
    let initializers: Vec<&str> = graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let inputs: Vec<&pb::ValueInfoProto> = graph
        .input
        .iter()
        .filter(|i| !initializers.contains(&i.name.as_str()))
        .collect();
    if inputs.len() != 1 || graph.output.len() != 1 {
        return Err(format!(
            "expected one input and one output, found {} and {}",
            inputs.len(),
            graph.output.len()
        ));
    }
    let s = i64::from(config.input_size);
    if let Some(d) = dims_of(inputs[0]) {
        let ok = d.len() == 4
            && d[0].is_none_or(|v| v == 1)
            && d[1].is_none_or(|v| v == 3)
            && d[2].is_none_or(|v| v == s)
            && d[3].is_none_or(|v| v == s);
        if !ok {
            return Err(format!("input shape {d:?} is not [1, 3, {s}, {s}]"));
        }
    }
    let rows = 4 + config.label_map.len() as i64;
    match dims_of(&graph.output[0]) {
        Some(d) => {
            let ok = d.len() == 3 && d[0].is_none_or(|v| v == 1) && d[1].is_none_or(|v| v == rows);
            if !ok {
                return Err(format!("output shape {d:?} is not [1, {rows}, N]"));
            }
            Ok(d[2].and_then(|n| usize::try_from(n).ok()))
        }
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_formats() {
        let want = vec!["vessel_with_barge", "vessel_without_barge", "barge"];
        assert_eq!(parse_names(r#"["vessel_with_barge", "vessel_without_barge", "barge"]"#).unwrap(), want);
        assert_eq!(
            parse_names("{0: 'vessel_with_barge', 1: 'vessel_without_barge', 2: 'barge'}").unwrap(),
            want
        );
        assert_eq!(
            parse_names("{2: 'barge', 0: 'vessel_with_barge', 1: 'vessel_without_barge'}").unwrap(),
            want
        );
        assert!(parse_names("{0: 'a', 2: 'b'}").is_err());
        assert!(parse_names("barge").is_err());
    }

    #[test]
    fn raw_prediction_layout() {
        // two candidates, three classes, row-major [1, 7, 2]
        let data = [
            10.0, 50.0, // cx
            20.0, 60.0, // cy
            4.0, 10.0, // w
            8.0, 10.0, // h
            0.1, 0.0, //
            0.2, 0.0, //
            0.7, 0.9,
        ];
        let raw = raw_predictions(&[1, 7, 2], &data, 3).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw[0].bbox, [8.0, 16.0, 12.0, 24.0]);
        assert!((raw[0].scores[2] - 0.7).abs() < 1e-6);
        assert_eq!(raw[1].bbox, [45.0, 55.0, 55.0, 65.0]);
        assert!(raw_predictions(&[1, 6, 2], &data[..12], 3).is_err());
        assert!(raw_predictions(&[7, 2], &data, 3).is_err());
    }

    #[test]
    fn tensor_is_channel_first() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, image::Rgb([255, 0, 51]));
        let t = to_tensor(&img);
        let v = t.to_plain_array_view::<f32>().unwrap();
        assert_eq!(v.shape(), &[1, 3, 1, 2]);
        assert_eq!(v[[0, 0, 0, 1]], 1.0);
        assert_eq!(v[[0, 1, 0, 1]], 0.0);
        assert!((v[[0, 2, 0, 1]] - 0.2).abs() < 1e-6);
    }
}
