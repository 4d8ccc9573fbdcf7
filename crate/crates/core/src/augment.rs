//! Label-preserving augmentation of images together with their boxes.
//!
//! Geometric kinds (crop, hflip, scale, rotate, shear) move boxes with the
//! pixels; photometric kinds (blur, saturation, brightness, exposure, noise,
//! cutout, fog, rain) leave boxes untouched. After a geometric transform a
//! box is clipped to the frame and dropped when less than `min_visibility`
//! of its transformed area is left.
//!
//! Parameter defaults are starting points, not tuned values:
//!
//! | kind | parameters (default) |
//! |------|----------------------|
//! | crop | kept side fraction 0.6 – 0.9 |
//! | gaussian_blur | sigma 0.5 – 2.0 |
//! | scale | factor 0.8 – 1.2 |
//! | rotate | degrees -15 – 15 |
//! | shear | up to 10 degrees on each axis |
//! | saturation | factor 0.5 – 1.5 |
//! | brightness | offset -0.25 – 0.25 of full scale |
//! | exposure | gain 0.7 – 1.3 |
//! | cutout | 3 patches, 5 % – 15 % of the short side |
//! | noise | std dev 2 – 10 (8-bit units) |
//! | fog | sigma 2.0, lift 0.15, contrast 0.6 |
//! | rain | 250 streaks, length 14 px, intensity 70, exposure 0.8 |

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{emit_label_file, DatasetError, DatasetManifest, GroundTruthBox, ImageRecord, Origin, Weather};
use crate::geometry::{BBox, Space};

/// Fill value for pixels a transform exposes.
pub const FILL_GRAY: u8 = 114;

/// Attempts at placing a cutout patch before giving up on it.
const CUTOUT_ATTEMPTS: usize = 32;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropParams {
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            min_fraction: 0.6,
            max_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlurParams {
    pub min_sigma: f64,
    pub max_sigma: f64,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            min_sigma: 0.5,
            max_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleParams {
    pub min_factor: f64,
    pub max_factor: f64,
}

impl Default for ScaleParams {
    fn default() -> Self {
        Self {
            min_factor: 0.8,
            max_factor: 1.2,
        }
    }
}

/// Counter-clockwise rotation range in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RotateParams {
    pub min_degrees: f64,
    pub max_degrees: f64,
}

impl Default for RotateParams {
    fn default() -> Self {
        Self {
            min_degrees: -15.0,
            max_degrees: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShearParams {
    pub max_x_degrees: f64,
    pub max_y_degrees: f64,
}

impl Default for ShearParams {
    fn default() -> Self {
        Self {
            max_x_degrees: 10.0,
            max_y_degrees: 10.0,
        }
    }
}

/// Generic `[min, max]` range for the scalar photometric kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutoutParams {
    pub count: u32,
    /// Patch side as a fraction of the image's short side.
    pub min_size: f64,
    pub max_size: f64,
    /// Largest share of any ground-truth box a patch may cover.
    pub max_box_coverage: f64,
}

impl Default for CutoutParams {
    fn default() -> Self {
        Self {
            count: 3,
            min_size: 0.05,
            max_size: 0.15,
            max_box_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FogParams {
    pub sigma: f64,
    /// Brightness lift as a fraction of full scale.
    pub lift: f64,
    /// Contrast multiplier about mid-gray, in (0, 1].
    pub contrast: f64,
}

impl Default for FogParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            lift: 0.15,
            contrast: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RainParams {
    pub streaks: u32,
    pub length: f64,
    pub slant_degrees: f64,
    /// Added to streak pixels, 8-bit units.
    pub intensity: f64,
    /// Gain applied after the streaks.
    pub exposure: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self {
            streaks: 250,
            length: 14.0,
            slant_degrees: 15.0,
            intensity: 70.0,
            exposure: 0.8,
        }
    }
}

fn default_saturation() -> Range {
    Range { min: 0.5, max: 1.5 }
}
fn default_brightness() -> Range {
    Range { min: -0.25, max: 0.25 }
}
fn default_exposure() -> Range {
    Range { min: 0.7, max: 1.3 }
}
fn default_noise() -> Range {
    Range { min: 2.0, max: 10.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentKind {
    Crop(#[serde(default)] CropParams),
    GaussianBlur(#[serde(default)] BlurParams),
    Hflip,
    Scale(#[serde(default)] ScaleParams),
    Rotate(#[serde(default)] RotateParams),
    Shear(#[serde(default)] ShearParams),
    Saturation {
        #[serde(default = "default_saturation")]
        factor: Range,
    },
    Brightness {
        #[serde(default = "default_brightness")]
        offset: Range,
    },
    Exposure {
        #[serde(default = "default_exposure")]
        gain: Range,
    },
    Cutout(#[serde(default)] CutoutParams),
    Noise {
        #[serde(default = "default_noise")]
        std_dev: Range,
    },
    Fog(#[serde(default)] FogParams),
    Rain(#[serde(default)] RainParams),
}

impl AugmentKind {
    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            AugmentKind::Crop(_) | AugmentKind::Hflip | AugmentKind::Scale(_) | AugmentKind::Rotate(_) | AugmentKind::Shear(_)
        )
    }

    /// Weather tag the output should carry, for the weather simulations.
    pub fn weather_override(&self) -> Option<Weather> {
        match self {
            AugmentKind::Fog(_) => Some(Weather::Fog),
            AugmentKind::Rain(_) => Some(Weather::Rain),
            _ => None,
        }
    }
}

fn default_probability() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(flatten)]
    pub kind: AugmentKind,
    /// Chance of applying this step in a pipeline chain.
    #[serde(default = "default_probability")]
    pub probability: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(kind: AugmentKind, seed: u64) -> Self {
        Self {
            kind,
            probability: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::InvalidSpec(msg));
        let range = |name: &str, lo: f64, hi: f64| -> Result<(), AugmentError> {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                Err(AugmentError::InvalidSpec(format!("{name}: range [{lo}, {hi}] is empty or non-finite")))
            } else {
                Ok(())
            }
        };
        if !(0.0..=1.0).contains(&self.probability) {
            return bad(format!("probability {} is outside [0, 1]", self.probability));
        }
        match &self.kind {
            AugmentKind::Crop(p) => {
                range("crop", p.min_fraction, p.max_fraction)?;
                if p.min_fraction <= 0.0 || p.max_fraction > 1.0 {
                    return bad("crop fractions must lie in (0, 1]".into());
                }
            }
            AugmentKind::GaussianBlur(p) => {
                range("gaussian_blur", p.min_sigma, p.max_sigma)?;
                if p.min_sigma <= 0.0 {
                    return bad("blur sigma must be positive".into());
                }
            }
            AugmentKind::Hflip => {}
            AugmentKind::Scale(p) => {
                range("scale", p.min_factor, p.max_factor)?;
                if p.min_factor <= 0.0 {
                    return bad("scale factor must be positive".into());
                }
            }
            AugmentKind::Rotate(p) => range("rotate", p.min_degrees, p.max_degrees)?,
            AugmentKind::Shear(p) => {
                for v in [p.max_x_degrees, p.max_y_degrees] {
                    if !(0.0..80.0).contains(&v) {
                        return bad(format!("shear angle {v} must lie in [0, 80) degrees"));
                    }
                }
            }
            AugmentKind::Saturation { factor } => {
                range("saturation", factor.min, factor.max)?;
                if factor.min < 0.0 {
                    return bad("saturation factor must be non-negative".into());
                }
            }
            AugmentKind::Brightness { offset } => {
                range("brightness", offset.min, offset.max)?;
                if offset.min < -1.0 || offset.max > 1.0 {
                    return bad("brightness offset must lie in [-1, 1]".into());
                }
            }
            AugmentKind::Exposure { gain } => {
                range("exposure", gain.min, gain.max)?;
                if gain.min <= 0.0 {
                    return bad("exposure gain must be positive".into());
                }
            }
            AugmentKind::Cutout(p) => {
                range("cutout", p.min_size, p.max_size)?;
                if p.min_size <= 0.0 || p.max_size > 1.0 {
                    return bad("cutout size must lie in (0, 1]".into());
                }
                if !(0.0..=1.0).contains(&p.max_box_coverage) {
                    return bad("cutout max_box_coverage must lie in [0, 1]".into());
                }
            }
            AugmentKind::Noise { std_dev } => {
                range("noise", std_dev.min, std_dev.max)?;
                if std_dev.min < 0.0 {
                    return bad("noise std_dev must be non-negative".into());
                }
            }
            AugmentKind::Fog(p) => {
                if p.sigma <= 0.0 || !(0.0..=1.0).contains(&p.lift) || !(p.contrast > 0.0 && p.contrast <= 1.0) {
                    return bad("fog needs sigma > 0, lift in [0, 1], contrast in (0, 1]".into());
                }
            }
            AugmentKind::Rain(p) => {
                if p.length <= 0.0 || p.exposure <= 0.0 || p.intensity < 0.0 {
                    return bad("rain needs length > 0, exposure > 0, intensity >= 0".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOptions {
    pub min_visibility: f64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self { min_visibility: 0.3 }
    }
}

/// Applies one spec, seeded by `spec.seed`.
pub fn apply(
    spec: &AugmentSpec,
    image: &RgbImage,
    boxes: &[GroundTruthBox],
) -> Result<(RgbImage, Vec<GroundTruthBox>), AugmentError> {
    apply_with(spec, image, boxes, &AugmentOptions::default(), &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// Applies one spec drawing parameters from `rng`. `spec.probability` is not
/// consulted here; pipelines decide whether a step runs.
pub fn apply_with<R: Rng>(
    spec: &AugmentSpec,
    image: &RgbImage,
    boxes: &[GroundTruthBox],
    options: &AugmentOptions,
    rng: &mut R,
) -> Result<(RgbImage, Vec<GroundTruthBox>), AugmentError> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&options.min_visibility) {
        return Err(AugmentError::InvalidSpec(format!(
            "min_visibility {} is outside [0, 1]",
            options.min_visibility
        )));
    }
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(AugmentError::InvalidSpec("image has zero size".into()));
    }
    let (wf, hf) = (f64::from(w), f64::from(h));
    let (cx, cy) = (wf / 2.0, hf / 2.0);

    let out = match &spec.kind {
        AugmentKind::Hflip => {
            let img = imageops::flip_horizontal(image);
            let boxes = boxes
                .iter()
                .map(|b| {
                    let [x0, y0, x1, y1] = b.bbox.corners();
                    GroundTruthBox {
                        label: b.label,
                        bbox: BBox::normalized(1.0 - x1, y0, 1.0 - x0, y1).expect("mirrored box stays valid"),
                    }
                })
                .collect();
            (img, boxes)
        }
        AugmentKind::Crop(p) => {
            let frac = sample(rng, p.min_fraction, p.max_fraction);
            let cw = ((wf * frac).round() as u32).clamp(1, w);
            let ch = ((hf * frac).round() as u32).clamp(1, h);
            let x = rng.random_range(0..=w - cw);
            let y = rng.random_range(0..=h - ch);
            let img = imageops::crop_imm(image, x, y, cw, ch).to_image();
            let map = Affine::translate(-f64::from(x), -f64::from(y));
            let boxes = transform_boxes(boxes, &map, (wf, hf), (f64::from(cw), f64::from(ch)), options.min_visibility);
            (img, boxes)
        }
        AugmentKind::Scale(p) => {
            let s = sample(rng, p.min_factor, p.max_factor);
            let map = Affine::about_center([[s, 0.0], [0.0, s]], cx, cy);
            warp(image, boxes, &map, options.min_visibility)
        }
        AugmentKind::Rotate(p) => {
            let theta = sample(rng, p.min_degrees, p.max_degrees).to_radians();
            warp(image, boxes, &Affine::rotation(theta, cx, cy), options.min_visibility)
        }
        AugmentKind::Shear(p) => {
            let ax = sample(rng, -p.max_x_degrees, p.max_x_degrees).to_radians();
            let ay = sample(rng, -p.max_y_degrees, p.max_y_degrees).to_radians();
            let map = Affine::about_center([[1.0, ax.tan()], [ay.tan(), 1.0]], cx, cy);
            warp(image, boxes, &map, options.min_visibility)
        }
        AugmentKind::GaussianBlur(p) => {
            let sigma = sample(rng, p.min_sigma, p.max_sigma);
            (imageops::blur(image, sigma as f32), boxes.to_vec())
        }
        AugmentKind::Saturation { factor } => {
            let f = sample(rng, factor.min, factor.max);
            (map_pixels(image, |px| saturate(px, f)), boxes.to_vec())
        }
        AugmentKind::Brightness { offset } => {
            let d = sample(rng, offset.min, offset.max) * 255.0;
            (map_channels(image, |c| c + d), boxes.to_vec())
        }
        AugmentKind::Exposure { gain } => {
            let g = sample(rng, gain.min, gain.max);
            (map_channels(image, |c| c * g), boxes.to_vec())
        }
        AugmentKind::Noise { std_dev } => {
            let sd = sample(rng, std_dev.min, std_dev.max);
            let mut img = image.clone();
            if sd > 0.0 {
                let normal = Normal::new(0.0, sd).expect("std dev validated");
                for px in img.pixels_mut() {
                    for c in px.0.iter_mut() {
                        *c = to_u8(f64::from(*c) + normal.sample(rng));
                    }
                }
            }
            (img, boxes.to_vec())
        }
        AugmentKind::Cutout(p) => (cutout(image, boxes, p, rng), boxes.to_vec()),
        AugmentKind::Fog(p) => {
            let blurred = imageops::blur(image, p.sigma as f32);
            let lift = p.lift * 255.0;
            (map_channels(&blurred, |c| 128.0 + p.contrast * (c - 128.0) + lift), boxes.to_vec())
        }
        AugmentKind::Rain(p) => (rain(image, p, rng), boxes.to_vec()),
    };
    Ok(out)
}

fn sample<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_channels(image: &RgbImage, f: impl Fn(f64) -> f64) -> RgbImage {
    map_pixels(image, |px| Rgb(px.0.map(|c| to_u8(f(f64::from(c))))))
}

fn map_pixels(image: &RgbImage, f: impl Fn(&Rgb<u8>) -> Rgb<u8>) -> RgbImage {
    let mut out = image.clone();
    for px in out.pixels_mut() {
        *px = f(px);
    }
    out
}

fn saturate(px: &Rgb<u8>, factor: f64) -> Rgb<u8> {
    let [r, g, b] = px.0.map(f64::from);
    let gray = 0.299 * r + 0.587 * g + 0.114 * b;
    Rgb([r, g, b].map(|c| to_u8(gray + factor * (c - gray))))
}

/// Pixel-space affine map `p' = m p + t`.
#[derive(Debug, Clone, Copy)]
struct Affine {
    m: [[f64; 2]; 2],
    t: [f64; 2],
}

impl Affine {
    fn translate(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0], [0.0, 1.0]],
            t: [dx, dy],
        }
    }

    fn about_center(m: [[f64; 2]; 2], cx: f64, cy: f64) -> Self {
        let t = [
            cx - (m[0][0] * cx + m[0][1] * cy),
            cy - (m[1][0] * cx + m[1][1] * cy),
        ];
        Self { m, t }
    }

    /// Counter-clockwise as seen on screen (y axis pointing down).
    fn rotation(theta: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::about_center([[c, s], [-s, c]], cx, cy)
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.t[0],
            self.m[1][0] * x + self.m[1][1] * y + self.t[1],
        )
    }

    fn inverse(&self) -> Self {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = [
            -(inv[0][0] * self.t[0] + inv[0][1] * self.t[1]),
            -(inv[1][0] * self.t[0] + inv[1][1] * self.t[1]),
        ];
        Self { m: inv, t }
    }
}

/// Warps the image through `map` (same output size) and moves the boxes.
fn warp(image: &RgbImage, boxes: &[GroundTruthBox], map: &Affine, min_visibility: f64) -> (RgbImage, Vec<GroundTruthBox>) {
    let (w, h) = image.dimensions();
    let inv = map.inverse();
    let mut out = RgbImage::from_pixel(w, h, Rgb([FILL_GRAY; 3]));
    for (x, y, px) in out.enumerate_pixels_mut() {
        let (sx, sy) = inv.apply(f64::from(x) + 0.5, f64::from(y) + 0.5);
        if let Some(v) = bilinear(image, sx - 0.5, sy - 0.5) {
            *px = v;
        }
    }
    let dims = (f64::from(w), f64::from(h));
    (out, transform_boxes(boxes, map, dims, dims, min_visibility))
}

fn bilinear(image: &RgbImage, x: f64, y: f64) -> Option<Rgb<u8>> {
    let (w, h) = image.dimensions();
    if x < -0.5 || y < -0.5 || x > f64::from(w) - 0.5 || y > f64::from(h) - 0.5 {
        return None;
    }
    let x = x.clamp(0.0, f64::from(w - 1));
    let y = y.clamp(0.0, f64::from(h - 1));
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - f64::from(x0), y - f64::from(y0));
    let p = |xx, yy| image.get_pixel(xx, yy).0.map(f64::from);
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut v = [0u8; 3];
    for i in 0..3 {
        let top = a[i] * (1.0 - fx) + b[i] * fx;
        let bottom = c[i] * (1.0 - fx) + d[i] * fx;
        v[i] = to_u8(top * (1.0 - fy) + bottom * fy);
    }
    Some(Rgb(v))
}

/// Maps normalized boxes through a pixel-space affine map from a `src`-sized
/// frame into a `dst`-sized one, using the axis-aligned envelope of the
/// moved corners.
fn transform_boxes(
    boxes: &[GroundTruthBox],
    map: &Affine,
    src: (f64, f64),
    dst: (f64, f64),
    min_visibility: f64,
) -> Vec<GroundTruthBox> {
    boxes
        .iter()
        .filter_map(|b| {
            let [x0, y0, x1, y1] = b.bbox.corners();
            let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
                .map(|(x, y)| map.apply(x * src.0, y * src.1))
                .map(|(x, y)| (x / dst.0, y / dst.1));
            let ex0 = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let ex1 = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
            let ey0 = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            let ey1 = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let full = (ex1 - ex0) * (ey1 - ey0);
            let clipped = BBox::clipped(ex0, ey0, ex1, ey1, Space::Normalized)?;
            if full <= 0.0 || clipped.area() < min_visibility * full {
                return None;
            }
            Some(GroundTruthBox {
                label: b.label,
                bbox: clipped,
            })
        })
        .collect()
}

fn cutout<R: Rng>(image: &RgbImage, boxes: &[GroundTruthBox], p: &CutoutParams, rng: &mut R) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = image.dimensions();
    let (wf, hf) = (f64::from(w), f64::from(h));
    let short = wf.min(hf);
    let pixel_boxes: Vec<BBox> = boxes
        .iter()
        .map(|b| b.bbox.convert(Space::Pixel { width: w, height: h }).expect("normalized box converts"))
        .collect();
    for _ in 0..p.count {
        for _ in 0..CUTOUT_ATTEMPTS {
            let side = (sample(rng, p.min_size, p.max_size) * short).round().max(1.0);
            let pw = (side as u32).min(w);
            let ph = (side as u32).min(h);
            let x = rng.random_range(0..=w - pw);
            let y = rng.random_range(0..=h - ph);
            let patch = BBox::pixel(f64::from(x), f64::from(y), f64::from(x + pw), f64::from(y + ph), w, h)
                .expect("patch lies inside the frame");
            let covers_too_much = pixel_boxes
                .iter()
                .any(|b| patch.intersection_area(b) > p.max_box_coverage * b.area());
            if covers_too_much {
                continue;
            }
            for yy in y..y + ph {
                for xx in x..x + pw {
                    out.put_pixel(xx, yy, Rgb([FILL_GRAY; 3]));
                }
            }
            break;
        }
    }
    out
}

fn rain<R: Rng>(image: &RgbImage, p: &RainParams, rng: &mut R) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    let (dx, dy) = {
        let a = p.slant_degrees.to_radians();
        (a.sin(), a.cos())
    };
    let steps = p.length.ceil() as i64;
    for _ in 0..p.streaks {
        let x0 = rng.random_range(0.0..f64::from(w));
        let y0 = rng.random_range(0.0..f64::from(h));
        for s in 0..=steps {
            let x = (x0 + dx * s as f64).floor();
            let y = (y0 + dy * s as f64).floor();
            if x < 0.0 || y < 0.0 || x >= f64::from(w) || y >= f64::from(h) {
                break;
            }
            let px = out.get_pixel_mut(x as u32, y as u32);
            px.0 = px.0.map(|c| to_u8(f64::from(c) + p.intensity));
        }
    }
    map_channels(&out, |c| c * p.exposure)
}

/// Batch augmentation settings, usually read from a TOML file:
///
/// ```toml
/// per_image_count = 2
/// max_total = 440
/// seed = 7
/// min_visibility = 0.3
///
/// [[specs]]
/// kind = "hflip"
/// probability = 0.5
///
/// [[specs]]
/// kind = "rotate"
/// min_degrees = -10.0
/// max_degrees = 10.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub per_image_count: usize,
    /// Caps the number of augmented records; copies are produced one round
    /// over all originals at a time.
    #[serde(default)]
    pub max_total: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_visibility")]
    pub min_visibility: f64,
    pub specs: Vec<AugmentSpec>,
}

fn default_min_visibility() -> f64 {
    AugmentOptions::default().min_visibility
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        for s in &self.specs {
            s.validate()?;
        }
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return Err(AugmentError::InvalidSpec(format!(
                "min_visibility {} is outside [0, 1]",
                self.min_visibility
            )));
        }
        Ok(())
    }
}

/// Seed for one pipeline step, stable across platforms and releases.
pub fn derive_seed(global_seed: u64, image_id: &str, copy: usize, spec_index: usize, spec_seed: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update((image_id.len() as u64).to_le_bytes());
    hasher.update(image_id.as_bytes());
    hasher.update((copy as u64).to_le_bytes());
    hasher.update((spec_index as u64).to_le_bytes());
    hasher.update(spec_seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Runs the configured chain over every original record's image and
/// `per_image_count` copies of it, writing `images/<id>.png` and
/// `labels/<id>.txt` below `out_dir`. Returns the new records, in
/// generation order.
pub fn pipeline(config: &AugmentConfig, manifest: &DatasetManifest, out_dir: &Path) -> Result<Vec<ImageRecord>, AugmentError> {
    config.validate()?;
    let originals: Vec<&ImageRecord> = manifest.originals().collect();
    let mut jobs: Vec<(&ImageRecord, usize)> = (0..config.per_image_count)
        .flat_map(|copy| originals.iter().map(move |r| (*r, copy)))
        .collect();
    if let Some(cap) = config.max_total {
        jobs.truncate(cap);
    }
    if jobs.is_empty() {
        return Ok(Vec::new());
    }

    let images_dir = out_dir.join("images");
    let labels_dir = out_dir.join("labels");
    for d in [&images_dir, &labels_dir] {
        fs::create_dir_all(d).map_err(|e| AugmentError::Io {
            path: d.clone(),
            source: e,
        })?;
    }
    let options = AugmentOptions {
        min_visibility: config.min_visibility,
    };

    jobs.par_iter()
        .map(|(record, copy)| {
            let source = image::open(&record.path)
                .map_err(|e| AugmentError::Image {
                    path: record.path.clone(),
                    source: e,
                })?
                .to_rgb8();
            let mut img = source;
            let mut boxes = record.annotations.clone();
            let mut weather = record.weather;
            for (i, spec) in config.specs.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &record.id, *copy, i, spec.seed));
                if rng.random::<f64>() >= spec.probability {
                    continue;
                }
                let (next_img, next_boxes) = apply_with(spec, &img, &boxes, &options, &mut rng)?;
                img = next_img;
                boxes = next_boxes;
                if let Some(w) = spec.kind.weather_override() {
                    weather = w;
                }
            }
            let id = format!("{}_aug{}", record.id, copy);
            let image_path = images_dir.join(format!("{id}.png"));
            img.save(&image_path).map_err(|e| AugmentError::Image {
                path: image_path.clone(),
                source: e,
            })?;
            let label_path = labels_dir.join(format!("{id}.txt"));
            fs::write(&label_path, emit_label_file(&boxes, &manifest.label_map)).map_err(|e| AugmentError::Io {
                path: label_path.clone(),
                source: e,
            })?;
            Ok(ImageRecord {
                id,
                path: image_path,
                location: record.location.clone(),
                weather,
                time_of_day: record.time_of_day,
                origin: Origin::Augmented {
                    parent_id: record.id.clone(),
                },
                annotations: boxes,
            })
        })
        .collect()
}
