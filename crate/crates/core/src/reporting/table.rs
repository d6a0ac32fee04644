//! Model comparison table, sorted by F1.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{f1_from_pr, MetricsReport};

/// Reported F1 values may differ from the recomputed one by rounding only.
pub const F1_TOLERANCE: f64 = 1e-4;

/// Headline metrics for one model. `f1` is optional because it is always
/// recomputed from precision and recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonInput {
    #[serde(default)]
    pub model_name: Option<String>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(default)]
    pub f1: Option<f64>,
}

impl ComparisonInput {
    pub fn from_report(name: &str, report: &MetricsReport) -> Self {
        Self {
            model_name: Some(name.to_string()),
            accuracy: report.accuracy,
            precision: report.precision,
            recall: report.recall,
            f1: Some(report.f1),
        }
    }

    /// Reads a metrics JSON (a full report or just the four headline numbers).
    /// The model name defaults to the file stem.
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut input: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if input.model_name.is_none() {
            input.model_name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Builds rows sorted by F1 descending (ties by name). F1 is recomputed
/// from precision/recall; a disagreeing reported F1 is logged.
pub fn comparison_rows(inputs: &[ComparisonInput]) -> Result<Vec<ComparisonRow>> {
    if inputs.is_empty() {
        return Err(Error::Input("nothing to compare".into()));
    }
    let mut names = BTreeSet::new();
    let mut rows = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let name = input.model_name.clone().unwrap_or_else(|| format!("model_{}", i + 1));
        if !names.insert(name.clone()) {
            return Err(Error::Input(format!("duplicate model name `{name}`")));
        }
        for (metric, v) in [("accuracy", input.accuracy), ("precision", input.precision), ("recall", input.recall)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name}: {metric} {v} is outside [0, 1]")));
            }
        }
        let (f1, _) = f1_from_pr(input.precision, input.recall);
        if let Some(reported) = input.f1 {
            if (reported - f1).abs() > F1_TOLERANCE {
                log::warn!("{name}: reported F1 {reported} differs from 2PR/(P+R) = {f1:.6}");
            }
        }
        rows.push(ComparisonRow {
            model_name: name,
            accuracy: input.accuracy,
            precision: input.precision,
            recall: input.recall,
            f1,
        });
    }
    rows.sort_by(|a, b| b.f1.total_cmp(&a.f1).then_with(|| a.model_name.cmp(&b.model_name)));
    Ok(rows)
}

pub fn comparison_table(reports: &[(String, MetricsReport)]) -> Result<Vec<ComparisonRow>> {
    let inputs: Vec<_> = reports.iter().map(|(n, r)| ComparisonInput::from_report(n, r)).collect();
    comparison_rows(&inputs)
}

/// Fixed-width text rendering, four decimals.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let name_w = rows.iter().map(|r| r.model_name.len()).max().unwrap_or(0).max("Model".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_w$}  {:>8}  {:>9}  {:>6}  {:>8}", "Model", "Accuracy", "Precision", "Recall", "F1");
    let _ = writeln!(out, "{}", "-".repeat(name_w + 43));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>8.4}  {:>9.4}  {:>6.4}  {:>8.4}",
            r.model_name, r.accuracy, r.precision, r.recall, r.f1
        );
    }
    out
}

pub fn write_comparison(rows: &[ComparisonRow], csv_path: &Path, text_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    std::fs::write(text_path, format_table(rows)).map_err(|e| Error::io(text_path, e))
}
