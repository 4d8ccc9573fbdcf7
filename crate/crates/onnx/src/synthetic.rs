//! Tiny hand-built ONNX models that follow the backend's contract.
//!
//! Each candidate has a fixed box, and its class scores are fixed weights
//! times the mean input intensity. A white frame therefore yields the
//! weights as scores and a black frame yields zeros. That is enough to
//! exercise loading, letterboxing, decoding and thresholding end to end
//! without a trained network.

use prost::Message;
use tract_onnx::pb;

const FLOAT: i32 = pb::tensor_proto::DataType::Float as i32;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCandidate {
    /// `cx, cy, w, h` in model-input pixels.
    pub cxcywh: [f32; 4],
    /// One weight per class.
    pub class_weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub input_size: u32,
    pub names: Vec<String>,
    pub candidates: Vec<SyntheticCandidate>,
    /// Extra metadata entries, written after `names`.
    pub metadata: Vec<(String, String)>,
    /// Leave out the `names` entry (for negative tests).
    pub omit_names: bool,
}

impl SyntheticModel {
    pub fn new(input_size: u32, names: &[&str], candidates: Vec<SyntheticCandidate>) -> Self {
        Self {
            input_size,
            names: names.iter().map(|n| n.to_string()).collect(),
            candidates,
            metadata: Vec::new(),
            omit_names: false,
        }
    }

    /// Serialized ONNX model bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_proto().encode_to_vec()
    }

    pub fn to_proto(&self) -> pb::ModelProto {
        let n = self.candidates.len();
        let nc = self.names.len();
        let s = i64::from(self.input_size);

        // [1, 4, N] and [1, C, N], row-major
        let mut boxes = vec![0f32; 4 * n];
        let mut weights = vec![0f32; nc * n];
        for (j, c) in self.candidates.iter().enumerate() {
            for r in 0..4 {
                boxes[r * n + j] = c.cxcywh[r];
            }
            for k in 0..nc {
                weights[k * n + j] = c.class_weights.get(k).copied().unwrap_or(0.0);
            }
        }

        let graph = pb::GraphProto {
            name: "synthetic".into(),
            node: vec![
                node("ReduceMean", &["images"], "mean", vec![ints("axes", &[1, 2, 3]), int("keepdims", 0)]),
                node("Mul", &["weights", "mean"], "scores", vec![]),
                node("Concat", &["boxes", "scores"], "output0", vec![int("axis", 1)]),
            ],
            initializer: vec![
                tensor("boxes", &[1, 4, n as i64], boxes),
                tensor("weights", &[1, nc as i64, n as i64], weights),
            ],
            input: vec![value_info("images", &[1, 3, s, s])],
            output: vec![value_info("output0", &[1, 4 + nc as i64, n as i64])],
            ..Default::default()
        };

        let mut metadata_props = Vec::new();
        if !self.omit_names {
            let names = self
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| format!("{i}: '{n}'"))
                .collect::<Vec<_>>()
                .join(", ");
            metadata_props.push(entry("names", &format!("{{{names}}}")));
        }
        metadata_props.extend(self.metadata.iter().map(|(k, v)| entry(k, v)));

        pb::ModelProto {
            ir_version: 8,
            opset_import: vec![pb::OperatorSetIdProto {
                domain: String::new(),
                version: 13,
            }],
            producer_name: "bargewatch-synthetic".into(),
            graph: Some(graph),
            metadata_props,
            ..Default::default()
        }
    }
}

fn entry(key: &str, value: &str) -> pb::StringStringEntryProto {
    pb::StringStringEntryProto {
        key: key.into(),
        value: value.into(),
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attribute: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        name: output.into(),
        op_type: op.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        attribute,
        ..Default::default()
    }
}

fn int(name: &str, v: i64) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.into(),
        r#type: pb::attribute_proto::AttributeType::Int as i32,
        i: v,
        ..Default::default()
    }
}

fn ints(name: &str, v: &[i64]) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.into(),
        r#type: pb::attribute_proto::AttributeType::Ints as i32,
        ints: v.to_vec(),
        ..Default::default()
    }
}

fn tensor(name: &str, dims: &[i64], data: Vec<f32>) -> pb::TensorProto {
    pb::TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: FLOAT,
        float_data: data,
        ..Default::default()
    }
}

fn value_info(name: &str, dims: &[i64]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension::Value, Dimension};
    pb::ValueInfoProto {
        name: name.into(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: FLOAT,
                shape: Some(pb::TensorShapeProto {
                    dim: dims
                        .iter()
                        .map(|&d| Dimension {
                            value: Some(Value::DimValue(d)),
                            ..Default::default()
                        })
                        .collect(),
                }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}
