//! Batch predictions to CSV, with unreadable files logged to a sidecar.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Classifier;

const CHUNK: usize = 16;

#[derive(Debug, Serialize)]
struct PredictionRow<'a> {
    path: &'a str,
    probability: f64,
    predicted_label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    pub written: usize,
    pub failed: Vec<(PathBuf, String)>,
    pub error_log: Option<PathBuf>,
}

/// Sidecar next to `out`: `<stem>.errors.csv`.
pub fn error_log_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "predictions".into());
    out.with_file_name(format!("{stem}.errors.csv"))
}

/// Writes `path,probability,predicted_label` in input order. Label 1
/// (Unhealthy) when `probability >= threshold`.
pub fn write_predictions(model: &Classifier, paths: &[PathBuf], threshold: f64, out: &Path) -> Result<PredictionSummary> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Input(format!("threshold {threshold} is outside (0, 1)")));
    }
    let preprocess = &model.config().preprocess;
    let mut w = csv::Writer::from_path(out)?;
    let mut written = 0;
    let mut failed = Vec::new();
    for chunk in paths.chunks(CHUNK) {
        let loaded: Vec<_> = chunk.par_iter().map(|p| preprocess.load(p)).collect();
        let mut ok_paths = Vec::new();
        let mut images = Vec::new();
        for (p, r) in chunk.iter().zip(loaded) {
            match r {
                Ok(img) => {
                    ok_paths.push(p);
                    images.push(img);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", p.display());
                    failed.push((p.clone(), e.to_string()));
                }
            }
        }
        if images.is_empty() {
            continue;
        }
        for (p, prob) in ok_paths.iter().zip(model.predict_proba(&images)?) {
            w.serialize(PredictionRow {
                path: &p.to_string_lossy(),
                probability: prob,
                predicted_label: u8::from(prob >= threshold),
            })?;
            written += 1;
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let log_path = error_log_path(out);
    let error_log = if failed.is_empty() {
        if log_path.exists() {
            std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
        }
        None
    } else {
        let mut lw = csv::Writer::from_path(&log_path)?;
        lw.write_record(["path", "error"])?;
        for (p, e) in &failed {
            lw.write_record([p.to_string_lossy().as_ref(), e.as_str()])?;
        }
        lw.flush().map_err(|e| Error::io(&log_path, e))?;
        Some(log_path)
    };
    Ok(PredictionSummary { written, failed, error_log })
}
