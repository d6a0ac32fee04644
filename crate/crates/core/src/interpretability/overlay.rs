//! Side-by-side panels: original on the left, explanation overlay on the right,
//! caption strip underneath.

use std::path::Path;

use image::RgbImage;

use super::lime::Explanation;
use super::saliency::SaliencyMap;
use crate::error::{Error, Result};
use crate::preprocess::{ImageTensor, Normalization};
use crate::reporting::canvas::{Canvas, Color, BLACK, WHITE, YELLOW};

const CAPTION_HEIGHT: u32 = 14;
/// Opacity of the heatmap at saliency 1.
const HEAT_ALPHA: f64 = 0.6;
const TINT: f64 = 0.35;

fn panel(original: &RgbImage, overlay: &RgbImage, caption: &str) -> Canvas {
    let (w, h) = original.dimensions();
    let mut c = Canvas::new(2 * w, h + CAPTION_HEIGHT, WHITE);
    for (x, y, p) in original.enumerate_pixels() {
        c.put(x as i64, y as i64, p.0);
    }
    for (x, y, p) in overlay.enumerate_pixels() {
        c.put((x + w) as i64, y as i64, p.0);
    }
    c.text(2, h as i64 + 3, caption, BLACK, 1);
    c
}

fn blend(a: [u8; 3], b: Color, alpha: f64) -> [u8; 3] {
    let mix = |x: u8, y: u8| ((1.0 - alpha) * x as f64 + alpha * y as f64).round().clamp(0.0, 255.0) as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

/// Blue → red colour ramp.
fn heat(v: f64) -> Color {
    let v = v.clamp(0.0, 1.0);
    [(255.0 * v).round() as u8, (64.0 * (1.0 - (2.0 * v - 1.0).abs())).round() as u8, (255.0 * (1.0 - v)).round() as u8]
}

/// Original image in 8-bit RGB, undoing the model's normalisation.
pub fn display_image(image: &ImageTensor, normalization: Normalization) -> RgbImage {
    if image.value_range() == (0.0, 255.0) {
        image.to_rgb8()
    } else {
        image.denormalize(normalization).to_rgb8()
    }
}

/// Highlighted LIME segments are tinted yellow and outlined.
pub fn lime_overlay(original: &RgbImage, explanation: &Explanation) -> Result<RgbImage> {
    let seg = &explanation.segment_map;
    if (seg.width() as u32, seg.height() as u32) != original.dimensions() {
        return Err(Error::Shape("explanation does not match the image size".into()));
    }
    let mut out = original.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let (xs, ys) = (x as usize, y as usize);
        if explanation.top_mask[ys * seg.width() + xs] {
            p.0 = if seg.is_boundary(ys, xs) { YELLOW } else { blend(p.0, YELLOW, TINT) };
        }
    }
    Ok(out)
}

/// Heatmap blended with opacity proportional to saliency (zero saliency
/// leaves the pixel untouched).
pub fn saliency_overlay(original: &RgbImage, map: &SaliencyMap) -> Result<RgbImage> {
    if (map.width as u32, map.height as u32) != original.dimensions() {
        return Err(Error::Shape("saliency map does not match the image size".into()));
    }
    let mut out = original.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let v = map.get(y as usize, x as usize);
        if v > 0.0 {
            p.0 = blend(p.0, heat(v), HEAT_ALPHA * v);
        }
    }
    Ok(out)
}

pub fn render_lime_panel(original: &RgbImage, explanation: &Explanation, caption: &str, out: &Path) -> Result<()> {
    panel(original, &lime_overlay(original, explanation)?, caption).save_png(out)
}

pub fn render_saliency_panel(original: &RgbImage, map: &SaliencyMap, caption: &str, out: &Path) -> Result<()> {
    panel(original, &saliency_overlay(original, map)?, caption).save_png(out)
}

/// Caption text for a predicted probability.
pub fn prediction_caption(prob: f64, threshold: f64) -> String {
    let label = if prob >= threshold { "Unhealthy" } else { "Healthy" };
    format!("pred: {label} p={prob:.3}")
}
