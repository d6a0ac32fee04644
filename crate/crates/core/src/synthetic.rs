//! Seeded synthetic stand-in for an ultrasound dataset: dark speckled frames
//! for Healthy, brighter frames with bright elliptical blobs for Unhealthy.
//! Mean brightness separates the classes by construction.

use std::path::{Path, PathBuf};

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{scan_dataset, ClassLabel, DatasetManifest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_healthy: usize,
    pub n_unhealthy: usize,
    /// Side length of the square images.
    pub size: u32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { n_healthy: 16, n_unhealthy: 16, size: 64, seed: 42 }
    }
}

/// One grey frame. `index` selects an independent RNG stream.
pub fn synthetic_image(label: ClassLabel, size: u32, seed: u64, index: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index * 2 + u64::from(label == ClassLabel::Unhealthy));
    let (base, blobs) = match label {
        ClassLabel::Healthy => (45.0, 0),
        ClassLabel::Unhealthy => (110.0, rng.gen_range(3..6)),
    };
    let s = size as f64;
    let centres: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s, rng.gen_range(0.08..0.18) * s, rng.gen_range(0.6..1.0)))
        .collect();
    let mut img = GrayImage::new(size, size);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let (fx, fy) = (x as f64, y as f64);
        // fan-shaped vignette, like a sector scan
        let r = ((fx - s / 2.0).powi(2) + fy.powi(2)).sqrt() / s;
        let mut v = base * (1.2 - 0.4 * r) + rng.gen_range(-18.0..18.0);
        for &(cx, cy, rad, gain) in &centres {
            let d2 = ((fx - cx).powi(2) + (fy - cy).powi(2)) / (rad * rad);
            v += 140.0 * gain * (-d2).exp();
        }
        p.0 = [v.round().clamp(0.0, 255.0) as u8];
    }
    img
}

/// Writes `<root>/Healthy/*.png` and `<root>/Unhealthy/*.png` and returns
/// the scanned manifest.
pub fn make_synthetic(root: &Path, config: &SyntheticConfig) -> Result<DatasetManifest> {
    if config.size < 8 {
        return Err(Error::config("synthetic.size", "must be at least 8"));
    }
    if config.n_healthy + config.n_unhealthy == 0 {
        return Err(Error::config("synthetic", "asked for zero images"));
    }
    for (label, n) in [(ClassLabel::Healthy, config.n_healthy), (ClassLabel::Unhealthy, config.n_unhealthy)] {
        let dir = root.join(match label {
            ClassLabel::Healthy => "Healthy",
            ClassLabel::Unhealthy => "Unhealthy",
        });
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n {
            let path: PathBuf = dir.join(format!("{}_{i:04}.png", label.as_str()));
            let img = synthetic_image(label, config.size, config.seed, i as u64);
            let mut bytes = Vec::new();
            img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
    }
    scan_dataset(root)
}
