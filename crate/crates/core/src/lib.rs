//! Core building blocks for monitoring barge traffic from waterway cameras.
//!
//! The modules go from primitives to workflows: [`geometry`] boxes and NMS,
//! [`scene`] labels and scene classes, [`dataset`] records and splits,
//! [`augment`] label-preserving augmentation, [`detector`] inference
//! backends, [`evalsuite`] metrics and evaluation protocols, and [`bgsub`]
//! background modelling.

pub mod augment;
pub mod bgsub;
pub mod dataset;
pub mod detector;
pub mod evalsuite;
pub mod geometry;
pub mod scene;

pub use dataset::{DatasetManifest, GroundTruthBox, ImageRecord};
pub use detector::{DetectorBackend, Frame, PredictionSet, StubBackend};
pub use evalsuite::{ConfusionMatrix, MetricsReport};
pub use geometry::{iou, nms, BBox, Detection, Space};
pub use scene::{classify_scene, ObjectLabel, SceneClass};
