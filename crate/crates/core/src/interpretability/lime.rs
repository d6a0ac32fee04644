//! LIME: perturb superpixels on/off, score the perturbed images, and fit a
//! locally weighted ridge regression of the scores on the on/off bits.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::segmentation::{segment_superpixels, SegmentMap};
use crate::error::{Error, Result};
use crate::model::Scorer;
use crate::preprocess::ImageTensor;

pub const RIDGE_LAMBDA: f64 = 1e-3;
const SCORE_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Each hidden segment is replaced by its own mean colour.
    #[default]
    MeanColor,
    /// Hidden segments take the midpoint of the value range.
    Gray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimeConfig {
    pub n_segments_target: usize,
    pub n_samples: usize,
    /// Kernel width on the cosine-distance scale.
    pub kernel_width: f64,
    pub baseline: Baseline,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_segments_target: 40,
            n_samples: 1000,
            kernel_width: 0.25,
            baseline: Baseline::MeanColor,
            top_k: 5,
            seed: 42,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments_target < 2 {
            return Err(Error::config("lime.n_segments_target", "need at least 2 segments"));
        }
        if self.n_samples < 3 {
            return Err(Error::config("lime.n_samples", "need at least 3 samples"));
        }
        if !(self.kernel_width > 0.0) {
            return Err(Error::config("lime.kernel_width", "must be positive"));
        }
        if self.top_k == 0 {
            return Err(Error::config("lime.top_k", "must be positive"));
        }
        Ok(())
    }

    fn check_segments(&self, k: usize) -> Result<()> {
        if k < 2 {
            return Err(Error::Input(format!("LIME needs at least 2 segments, got {k}")));
        }
        if self.n_samples < k + 1 {
            return Err(Error::Input(format!("{} samples cannot fit {k} segments", self.n_samples)));
        }
        if self.top_k > k {
            return Err(Error::Input(format!("top_k {} exceeds {k} segments", self.top_k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    #[serde(skip)]
    pub segment_map: SegmentMap,
    pub n_segments: usize,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Segment ids in highlight order.
    pub top_segments: Vec<usize>,
    #[serde(skip)]
    pub top_mask: Vec<bool>,
    pub predicted_prob: f64,
    /// How `top_segments` were chosen.
    pub selection: &'static str,
    pub n_samples: usize,
    pub kernel_width: f64,
    pub seed: u64,
}

impl Explanation {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `n` masks over `k` segments; row `i` holds sample `i`, each bit on with
/// probability 1/2.
pub fn sample_masks(k: usize, n: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..k).map(|_| rng.gen_bool(0.5)).collect()).collect()
}

/// Cosine distance between a mask and the all-on mask; 1 for the empty mask.
pub fn cosine_distance_to_full(mask: &[bool]) -> f64 {
    let on = mask.iter().filter(|&&b| b).count();
    if on == 0 {
        1.0
    } else {
        1.0 - (on as f64 / mask.len() as f64).sqrt()
    }
}

pub fn kernel_weight(distance: f64, width: f64) -> f64 {
    (-(distance * distance) / (width * width)).exp()
}

/// Weighted ridge fit with an unpenalised intercept. Columns are processed
/// in a canonical order (by their bit pattern) so that relabelling segments
/// permutes the coefficients without changing a single bit.
pub fn fit_surrogate(masks: &[Vec<bool>], scores: &[f64], kernel_width: f64) -> Result<(Vec<f64>, f64)> {
    let n = masks.len();
    if n == 0 || scores.len() != n {
        return Err(Error::Input(format!("{n} masks but {} scores", scores.len())));
    }
    let k = masks[0].len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let col = |j: usize| masks.iter().map(move |m| m[j]);
        col(a).cmp(col(b)).then(a.cmp(&b))
    });

    let dim = k + 1;
    let mut ata = DMatrix::<f64>::zeros(dim, dim);
    let mut atb = DVector::<f64>::zeros(dim);
    let mut row = vec![0.0; dim];
    for (mask, &s) in masks.iter().zip(scores) {
        let w = kernel_weight(cosine_distance_to_full(mask), kernel_width);
        row[0] = 1.0;
        for (c, &j) in order.iter().enumerate() {
            row[c + 1] = if mask[j] { 1.0 } else { 0.0 };
        }
        for a in 0..dim {
            if row[a] == 0.0 {
                continue;
            }
            atb[a] += w * row[a] * s;
            for b in 0..dim {
                ata[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for d in 1..dim {
        ata[(d, d)] += RIDGE_LAMBDA;
    }
    let beta = match ata.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => ata
            .lu()
            .solve(&atb)
            .ok_or_else(|| Error::Contract("LIME design matrix is singular".into()))?,
    };
    let mut weights = vec![0.0; k];
    for (c, &j) in order.iter().enumerate() {
        weights[j] = beta[c + 1];
    }
    Ok((weights, beta[0]))
}

fn baseline_colors(image: &ImageTensor, segments: &SegmentMap, baseline: Baseline) -> Vec<[f64; 3]> {
    match baseline {
        Baseline::Gray => {
            let (lo, hi) = image.value_range();
            vec![[(lo + hi) / 2.0; 3]; segments.k()]
        }
        Baseline::MeanColor => {
            let mut sums = vec![[0.0; 3]; segments.k()];
            let mut counts = vec![0usize; segments.k()];
            for y in 0..image.height() {
                for x in 0..image.width() {
                    let l = segments.label(y, x);
                    let p = image.pixel(y, x);
                    for c in 0..3 {
                        sums[l][c] += p[c];
                    }
                    counts[l] += 1;
                }
            }
            sums.iter()
                .zip(&counts)
                .map(|(s, &n)| [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64])
                .collect()
        }
    }
}

/// Image with every segment whose bit is off replaced by its baseline colour.
pub fn perturb(image: &ImageTensor, segments: &SegmentMap, colors: &[[f64; 3]], mask: &[bool]) -> ImageTensor {
    image.map_pixels(|y, x, p| {
        let l = segments.label(y, x);
        if mask[l] {
            p
        } else {
            colors[l]
        }
    })
}

/// Runs LIME with explicit masks (row = sample, column = segment id).
pub fn explain_with_masks(
    model: &dyn Scorer,
    image: &ImageTensor,
    segments: &SegmentMap,
    masks: &[Vec<bool>],
    config: &LimeConfig,
) -> Result<Explanation> {
    let k = segments.k();
    config.check_segments(k)?;
    if (segments.height(), segments.width()) != (image.height(), image.width()) {
        return Err(Error::Shape("segment map does not match the image".into()));
    }
    if let Some(bad) = masks.iter().find(|m| m.len() != k) {
        return Err(Error::Input(format!("mask of length {} for {k} segments", bad.len())));
    }
    let colors = baseline_colors(image, segments, config.baseline);
    let mut scores = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(SCORE_BATCH) {
        let batch: Vec<ImageTensor> = chunk.iter().map(|m| perturb(image, segments, &colors, m)).collect();
        scores.extend(model.score(&batch)?);
    }
    let (weights, intercept) = fit_surrogate(masks, &scores, config.kernel_width)?;
    let predicted_prob = model.score(std::slice::from_ref(image))?[0];

    let mut ranked: Vec<usize> = (0..k).collect();
    // signed weight descending, ties to the lower id
    ranked.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let top_segments: Vec<usize> = ranked[..config.top_k].to_vec();
    let mut chosen = vec![false; k];
    for &s in &top_segments {
        chosen[s] = true;
    }
    let top_mask = segments.labels().iter().map(|&l| chosen[l as usize]).collect();
    Ok(Explanation {
        segment_map: segments.clone(),
        n_segments: k,
        weights,
        intercept,
        top_segments,
        top_mask,
        predicted_prob,
        selection: "top_k_by_signed_weight_desc",
        n_samples: masks.len(),
        kernel_width: config.kernel_width,
        seed: config.seed,
    })
}

/// Segments the image, draws seeded masks and explains `model`'s score.
pub fn lime_explain(model: &dyn Scorer, image: &ImageTensor, config: &LimeConfig) -> Result<Explanation> {
    config.validate()?;
    let segments = segment_superpixels(image, config.n_segments_target)?;
    config.check_segments(segments.k())?;
    let masks = sample_masks(segments.k(), config.n_samples, config.seed);
    explain_with_masks(model, image, &segments, &masks, config)
}
