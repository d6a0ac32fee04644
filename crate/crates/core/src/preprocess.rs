//! Image loading, bilinear resizing, normalization and label encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `x / 127.5 - 1`, the InceptionV3 convention.
    InceptionMinus1To1,
    /// `x / 255`.
    Unit0To1,
}

impl Normalization {
    pub fn range(self) -> (f64, f64) {
        match self {
            Normalization::InceptionMinus1To1 => (-1.0, 1.0),
            Normalization::Unit0To1 => (0.0, 1.0),
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Normalization::InceptionMinus1To1 => x / 127.5 - 1.0,
            Normalization::Unit0To1 => x / 255.0,
        }
    }

    pub fn invert(self, y: f64) -> f64 {
        match self {
            Normalization::InceptionMinus1To1 => (y + 1.0) * 127.5,
            Normalization::Unit0To1 => y * 255.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub target_height: usize,
    pub target_width: usize,
    pub normalization: Normalization,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_height: 256,
            target_width: 256,
            normalization: Normalization::InceptionMinus1To1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("preprocess.target_height", self.target_height),
            ("preprocess.target_width", self.target_width),
        ] {
            if v < 32 {
                return Err(Error::config(name, format!("{v} is below the minimum of 32")));
            }
        }
        Ok(())
    }

    /// Loads, resizes and normalizes one file.
    pub fn load(&self, path: &Path) -> Result<ImageTensor> {
        normalize(&load_and_resize(path, self)?, self.normalization)
    }
}

/// Row-major `height × width × 3` image with a declared value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
    height: usize,
    width: usize,
    range: (f64, f64),
}

impl ImageTensor {
    pub fn new(data: Vec<f64>, height: usize, width: usize, range: (f64, f64)) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {height}x{width}x3 = {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(range.0..=range.1).contains(*v)) {
            return Err(Error::Contract(format!(
                "value {v} outside declared range [{}, {}]",
                range.0, range.1
            )));
        }
        Ok(Self { data, height, width, range })
    }

    pub fn filled(height: usize, width: usize, value: f64, range: (f64, f64)) -> Result<Self> {
        Self::new(vec![value; height * width * 3], height, width, range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 3)
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Returns a copy with `f` applied to every pixel; values are clamped to the range.
    pub fn map_pixels(&self, mut f: impl FnMut(usize, usize, [f64; 3]) -> [f64; 3]) -> Self {
        let mut data = self.data.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let i = (y * self.width + x) * 3;
                let p = f(y, x, [data[i], data[i + 1], data[i + 2]]);
                for c in 0..3 {
                    data[i + c] = p[c].clamp(self.range.0, self.range.1);
                }
            }
        }
        Self { data, ..*self }
    }

    /// Copy with a single element replaced, bypassing the range check.
    /// Only meant for finite-difference probes.
    pub fn with_element(&self, y: usize, x: usize, c: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.data[(y * self.width + x) * 3 + c] = value;
        out
    }

    /// Inverts a normalization back to `[0, 255]`.
    pub fn denormalize(&self, mode: Normalization) -> Self {
        let data = self.data.iter().map(|&v| mode.invert(v).clamp(0.0, 255.0)).collect();
        Self { data, height: self.height, width: self.width, range: (0.0, 255.0) }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let (lo, hi) = self.range;
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            image::Rgb(p.map(|v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8))
        })
    }
}

fn decode(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    // grey sources replicate into all three channels
    Ok(img.to_rgb8())
}

/// Bilinear resize with half-pixel centres (`align_corners = false`).
pub fn resize_bilinear(src: &image::RgbImage, out_h: usize, out_w: usize) -> Vec<f64> {
    let (in_w, in_h) = (src.width() as usize, src.height() as usize);
    let raw = src.as_raw();
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| {
        let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, in_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, in_h);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| raw[(yy * in_w + xx) * 3 + c] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Reads `path` and resizes it to the configured size. Output values are in `[0, 255]`.
pub fn load_and_resize(path: &Path, config: &PreprocessConfig) -> Result<ImageTensor> {
    let img = decode(path)?;
    from_rgb8(&img, config)
}

pub fn from_rgb8(img: &image::RgbImage, config: &PreprocessConfig) -> Result<ImageTensor> {
    let data = resize_bilinear(img, config.target_height, config.target_width);
    ImageTensor::new(data, config.target_height, config.target_width, (0.0, 255.0))
}

pub fn normalize(image: &ImageTensor, mode: Normalization) -> Result<ImageTensor> {
    if image.range != (0.0, 255.0) {
        return Err(Error::Contract(format!(
            "normalize expects a [0, 255] tensor, got range {:?}",
            image.range
        )));
    }
    let (lo, hi) = mode.range();
    // the affine maps can overshoot the endpoints by one ulp
    let data = image.data.iter().map(|&v| mode.apply(v).clamp(lo, hi)).collect();
    ImageTensor::new(data, image.height, image.width, mode.range())
}

pub fn encode_label(label: ClassLabel) -> u8 {
    match label {
        ClassLabel::Healthy => 0,
        ClassLabel::Unhealthy => 1,
    }
}

pub fn decode_label(value: u8) -> Result<ClassLabel> {
    match value {
        0 => Ok(ClassLabel::Healthy),
        1 => Ok(ClassLabel::Unhealthy),
        v => Err(Error::Input(format!("label code {v} is not 0 or 1"))),
    }
}
