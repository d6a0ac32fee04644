//! Wall-clock timings: training throughput, end-to-end inference and,
//! optionally, explanation cost.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::interpretability::{lime_explain, LimeConfig};
use crate::model::Classifier;
use crate::preprocess::encode_label;
use crate::training::{TrainConfig, Trainer};

pub const MIN_REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub repetitions: usize,
    pub batch_size: usize,
    pub hardware_note: String,
    pub include_explanation: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { repetitions: MIN_REPETITIONS, batch_size: 32, hardware_note: String::new(), include_explanation: false }
    }
}

/// Externally published timings, kept for context only and never compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTimings {
    pub training_hours: f64,
    pub training_epochs: usize,
    pub seconds_per_image: f64,
    pub hardware: String,
}

impl Default for ReferenceTimings {
    fn default() -> Self {
        Self { training_hours: 3.0, training_epochs: 50, seconds_per_image: 30.0, hardware: "Nvidia GTX 1650".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Median time of one training pass over the sample (load + step).
    pub train_seconds_per_epoch: f64,
    /// Median per-image time for load, preprocess and predict.
    pub inference_seconds_per_image: f64,
    /// Median time for one LIME explanation, when requested.
    pub explanation_seconds_per_image: Option<f64>,
    pub n_images: usize,
    pub repetitions: usize,
    pub hardware_note: String,
    pub reference: ReferenceTimings,
}

impl TimingReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<f64> {
    let start = Instant::now();
    f()?;
    // clock granularity must not produce a zero duration
    Ok(start.elapsed().as_secs_f64().max(1e-9))
}

/// Times the model on `sample`. Training runs on a private copy, so `model`
/// is left untouched.
pub fn benchmark(model: &Classifier, sample: &DatasetManifest, config: &BenchmarkConfig) -> Result<TimingReport> {
    if sample.is_empty() {
        return Err(Error::Input("benchmark sample is empty".into()));
    }
    let reps = config.repetitions.max(MIN_REPETITIONS);
    let preprocess = &model.config().preprocess;
    let paths = sample.paths();
    let labels: Vec<u8> = sample.records().iter().map(|r| encode_label(r.label)).collect();
    let n = paths.len();

    let mut infer = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = timed(|| {
            for p in &paths {
                let img = preprocess.load(p)?;
                model.predict_proba(std::slice::from_ref(&img))?;
            }
            Ok(())
        })?;
        infer.push(t / n as f64);
    }

    let mut train = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut copy = model.deep_clone()?;
        let cfg = TrainConfig { epochs: 1, batch_size: config.batch_size, seed: rep as u64, ..TrainConfig::default() };
        let mut trainer = Trainer::new(&mut copy, &cfg)?;
        train.push(timed(|| {
            for (chunk, y) in paths.chunks(cfg.batch_size).zip(labels.chunks(cfg.batch_size)) {
                let imgs = chunk.iter().map(|p| preprocess.load(p)).collect::<Result<Vec<_>>>()?;
                trainer.train_step(&copy, &imgs, y)?;
            }
            Ok(())
        })?);
    }

    let explanation = if config.include_explanation {
        let img = preprocess.load(&paths[0])?;
        let lime = LimeConfig::default();
        let mut t = Vec::with_capacity(reps);
        for _ in 0..reps {
            t.push(timed(|| lime_explain(model, &img, &lime))?);
        }
        Some(median(&mut t))
    } else {
        None
    };

    Ok(TimingReport {
        train_seconds_per_epoch: median(&mut train),
        inference_seconds_per_image: median(&mut infer),
        explanation_seconds_per_image: explanation,
        n_images: n,
        repetitions: reps,
        hardware_note: config.hardware_note.clone(),
        reference: ReferenceTimings::default(),
    })
}
