//! Running-average background model, foreground masks and
//! background-suppressed normalization.
//!
//! Normalizing a frame replaces it with its absolute difference from the
//! background estimate, contrast-stretched to the full 8-bit range. Static
//! appearance that differs between sites (water colour, banks) drops out and
//! moving objects remain.

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BgSubError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("frame is {got:?}, background model is {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("background model has not seen a frame yet")]
    Uninitialized,
}

fn default_alpha() -> f64 {
    0.02
}
fn default_tau() -> f64 {
    25.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BgSubConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Foreground threshold on the 0-255 scale.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

impl Default for BgSubConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            tau: default_tau(),
        }
    }
}

impl BgSubConfig {
    pub fn validate(&self) -> Result<(), BgSubError> {
        check_alpha(self.alpha)?;
        check_tau(self.tau)
    }
}

fn check_alpha(alpha: f64) -> Result<(), BgSubError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(BgSubError::InvalidArgument(format!("alpha {alpha} must lie in (0, 1]")))
    }
}

fn check_tau(tau: f64) -> Result<(), BgSubError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(BgSubError::InvalidArgument(format!("tau {tau} must be positive")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    alpha: f64,
    width: u32,
    height: u32,
    /// Interleaved RGB means; empty until the first frame.
    mean: Vec<f64>,
    frames_seen: u64,
}

impl BackgroundModel {
    /// Empty model; the first [`update`](Self::update) copies the frame.
    pub fn new(alpha: f64) -> Result<Self, BgSubError> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            width: 0,
            height: 0,
            mean: Vec::new(),
            frames_seen: 0,
        })
    }

    /// Model whose current estimate is `image`.
    pub fn from_image(image: &RgbImage, alpha: f64) -> Result<Self, BgSubError> {
        let (w, h) = image.dimensions();
        Self::from_values(w, h, image.as_raw().iter().map(|&v| f64::from(v)).collect(), alpha)
    }

    /// Model from raw interleaved RGB means in `[0, 255]`.
    pub fn from_values(width: u32, height: u32, mean: Vec<f64>, alpha: f64) -> Result<Self, BgSubError> {
        check_alpha(alpha)?;
        if width == 0 || height == 0 || mean.len() != width as usize * height as usize * 3 {
            return Err(BgSubError::InvalidArgument(format!(
                "{} mean values do not describe a {width}x{height} RGB image",
                mean.len()
            )));
        }
        if mean.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(BgSubError::InvalidArgument("mean values must lie in [0, 255]".into()));
        }
        Ok(Self {
            alpha,
            width,
            height,
            mean,
            frames_seen: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn is_initialized(&self) -> bool {
        !self.mean.is_empty()
    }

    pub fn mean_values(&self) -> &[f64] {
        &self.mean
    }

    /// The current estimate rounded to 8 bits.
    pub fn mean_image(&self) -> Result<RgbImage, BgSubError> {
        self.check_init()?;
        let raw = self.mean.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Ok(RgbImage::from_raw(self.width, self.height, raw).expect("buffer size matches"))
    }

    fn check_init(&self) -> Result<(), BgSubError> {
        if self.is_initialized() {
            Ok(())
        } else {
            Err(BgSubError::Uninitialized)
        }
    }

    fn check_dims(&self, frame: &RgbImage) -> Result<(), BgSubError> {
        self.check_init()?;
        if frame.dimensions() != (self.width, self.height) {
            return Err(BgSubError::DimensionMismatch {
                expected: (self.width, self.height),
                got: frame.dimensions(),
            });
        }
        Ok(())
    }

    /// `mean = (1 - alpha) * mean + alpha * frame`, element-wise.
    pub fn update(&mut self, frame: &RgbImage) -> Result<(), BgSubError> {
        if !self.is_initialized() {
            let (w, h) = frame.dimensions();
            if w == 0 || h == 0 {
                return Err(BgSubError::InvalidArgument("empty frame".into()));
            }
            self.width = w;
            self.height = h;
            self.mean = frame.as_raw().iter().map(|&v| f64::from(v)).collect();
        } else {
            self.check_dims(frame)?;
            let a = self.alpha;
            for (m, &v) in self.mean.iter_mut().zip(frame.as_raw()) {
                *m = (1.0 - a) * *m + a * f64::from(v);
            }
        }
        self.frames_seen += 1;
        Ok(())
    }

    fn abs_diff(&self, frame: &RgbImage) -> Result<Vec<f64>, BgSubError> {
        self.check_dims(frame)?;
        Ok(self
            .mean
            .iter()
            .zip(frame.as_raw())
            .map(|(m, &v)| (f64::from(v) - m).abs())
            .collect())
    }

    /// 255 where the largest per-channel difference exceeds `tau`, else 0.
    pub fn foreground_mask(&self, frame: &RgbImage, tau: f64) -> Result<GrayImage, BgSubError> {
        check_tau(tau)?;
        let diff = self.abs_diff(frame)?;
        let mut mask = GrayImage::new(self.width, self.height);
        for (px, d) in mask.pixels_mut().zip(diff.chunks_exact(3)) {
            let m = d[0].max(d[1]).max(d[2]);
            *px = Luma([if m > tau { 255 } else { 0 }]);
        }
        Ok(mask)
    }

    /// Per-channel `|frame - mean|` scaled so the largest difference maps
    /// to 255. A frame identical to the background gives an all-black image.
    pub fn normalize(&self, frame: &RgbImage) -> Result<RgbImage, BgSubError> {
        let diff = self.abs_diff(frame)?;
        let peak = diff.iter().copied().fold(0.0, f64::max);
        let mut out = RgbImage::new(self.width, self.height);
        if peak <= 0.0 {
            return Ok(out);
        }
        let k = 255.0 / peak;
        for (px, d) in out.pixels_mut().zip(diff.chunks_exact(3)) {
            *px = Rgb([0, 1, 2].map(|c| (d[c] * k).round().clamp(0.0, 255.0) as u8));
        }
        Ok(out)
    }
}
