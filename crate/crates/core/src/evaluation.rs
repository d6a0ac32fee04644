//! Classification metrics computed from first principles. The positive class
//! is Unhealthy (label 1) and a score counts as positive when `score >= threshold`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scorer;
use crate::preprocess::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }
}

fn check_pair(y_true: &[u8], scores: &[f64]) -> Result<()> {
    if y_true.len() != scores.len() {
        return Err(Error::Input(format!(
            "{} labels but {} scores",
            y_true.len(),
            scores.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    if let Some(y) = y_true.iter().find(|&&y| y > 1) {
        return Err(Error::Input(format!("label {y} is not 0 or 1")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Input(format!("score {s} is not finite")));
    }
    Ok(())
}

pub fn confusion_matrix(y_true: &[u8], scores: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    check_pair(y_true, scores)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Input(format!("threshold {threshold} is outside (0, 1)")));
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &s) in y_true.iter().zip(scores) {
        match (y == 1, s >= threshold) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Which ratios hit a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall; `(0, true)` when both are zero.
pub fn f1_from_pr(precision: f64, recall: f64) -> (f64, bool) {
    if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<BasicMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("confusion matrix is empty".into()));
    }
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let (precision, dp) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, dr) = ratio(cm.tp, cm.tp + cm.fn_);
    let (f1, df) = f1_from_pr(precision, recall);
    Ok(BasicMetrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate: Degenerate { precision: dp, recall: dr, f1: df },
    })
}

/// ROC-AUC as the Mann–Whitney U statistic, computed from average ranks
/// (ties share their mean rank, i.e. half credit).
pub fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    check_pair(y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&y| y == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of doubled ranks keeps everything integral until the final division
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 average to (i+j+2)/2
        let doubled_rank = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if y_true[k] == 1 {
                pos_rank_sum2 += doubled_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    // U = R_pos - p(p+1)/2, all doubled
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub threshold: f64,
    pub n: usize,
    pub confusion: ConfusionMatrix,
    #[serde(default)]
    pub degenerate: Degenerate,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Four-decimal summary line, matching how the metrics are usually tabulated.
    pub fn summary(&self) -> String {
        let auc = self.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        format!(
            "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  auc {auc}  (n={}, threshold={})",
            self.accuracy, self.precision, self.recall, self.f1, self.n, self.threshold
        )
    }
}

/// Builds a full report from labels and scores.
pub fn evaluate_scores(y_true: &[u8], scores: &[f64], threshold: f64) -> Result<MetricsReport> {
    let confusion = confusion_matrix(y_true, scores, threshold)?;
    let m = metrics_from_confusion(&confusion)?;
    let auc = match roc_auc(y_true, scores) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc) => {
            log::warn!("ROC-AUC undefined: evaluation set contains a single class");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        model_name: None,
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        auc,
        threshold,
        n: y_true.len(),
        confusion,
        degenerate: m.degenerate,
    })
}

/// Scores every image with `model` and reports against `y_true`.
pub fn evaluate(model: &dyn Scorer, images: &[ImageTensor], y_true: &[u8], threshold: f64) -> Result<MetricsReport> {
    if images.len() != y_true.len() {
        return Err(Error::Input(format!(
            "{} images but {} labels",
            images.len(),
            y_true.len()
        )));
    }
    let scores = model.score(images)?;
    evaluate_scores(y_true, &scores, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_oracle(y: &[u8], s: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    const Y: [u8; 5] = [1, 1, 1, 0, 0];
    const S: [f64; 5] = [0.9, 0.8, 0.4, 0.3, 0.2];

    #[test]
    fn worked_example() {
        let cm = confusion_matrix(&Y, &S, 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 2, fp: 0, fn_: 1, tn: 2 });
        let m = metrics_from_confusion(&cm).unwrap();
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert_eq!(m.precision, 1.0);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 0.8).abs() < 1e-15);
        assert_eq!(roc_auc(&Y, &S).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_and_error_cases() {
        let m = metrics_from_confusion(&ConfusionMatrix { tp: 0, fp: 0, fn_: 3, tn: 2 }).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate.precision && m.degenerate.f1);
        assert!(metrics_from_confusion(&ConfusionMatrix::default()).is_err());
        let perfect = metrics_from_confusion(&ConfusionMatrix { tp: 3, fp: 0, fn_: 0, tn: 4 }).unwrap();
        assert_eq!([perfect.accuracy, perfect.precision, perfect.recall, perfect.f1], [1.0; 4]);
        assert!(matches!(confusion_matrix(&[1], &[0.2, 0.3], 0.5), Err(Error::Input(_))));
        assert!(matches!(confusion_matrix(&[], &[], 0.5), Err(Error::Input(_))));
        assert!(matches!(roc_auc(&[1, 1], &[0.2, 0.3]), Err(Error::UndefinedAuc)));
        assert_eq!(roc_auc(&[1, 0], &[0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(f1_from_pr(0.0, 0.0), (0.0, true));
        assert_eq!(f1_from_pr(1.0, 1.0), (1.0, false));
    }

    #[test]
    fn threshold_is_inclusive() {
        let cm = confusion_matrix(&[0, 1], &[0.5, 0.5], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 1, fn_: 0, tn: 0 });
    }

    #[test]
    fn published_f1_values() {
        for (p, r, f) in [(0.9001, 0.9716, 0.9345), (0.9024, 0.9492, 0.9252)] {
            assert!((f1_from_pr(p, r).0 - f).abs() <= 5e-5, "{p} {r}");
        }
    }

    #[test]
    fn report_json_keys() {
        let r = evaluate_scores(&Y, &S, 0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in ["accuracy", "precision", "recall", "f1", "auc", "threshold", "n", "confusion"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        for k in ["tp", "fp", "fn", "tn"] {
            assert!(v["confusion"].get(k).is_some(), "{k}");
        }
        let single = evaluate_scores(&[1, 1], &[0.4, 0.6], 0.5).unwrap();
        assert_eq!(single.auc, None);
    }

    fn labels_and_scores() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..2, n),
                // coarse grid so ties actually occur
                proptest::collection::vec((0u32..20).prop_map(|v| v as f64 / 20.0 + 0.01), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_oracle((y, s) in labels_and_scores()) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            prop_assert!((roc_auc(&y, &s).unwrap() - pair_oracle(&y, &s)).abs() <= 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_maps((y, s) in labels_and_scores()) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + v).collect();
            prop_assert_eq!(roc_auc(&y, &s).unwrap(), roc_auc(&y, &t).unwrap());
        }

        #[test]
        fn flip_symmetry((y, s) in labels_and_scores()) {
            // scores avoid 0.5 exactly, so the strict/non-strict boundary never matters
            let cm = confusion_matrix(&y, &s, 0.5).unwrap();
            let yf: Vec<u8> = y.iter().map(|v| 1 - v).collect();
            let sf: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
            let f = confusion_matrix(&yf, &sf, 0.5).unwrap();
            prop_assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (f.tn, f.tp, f.fn_, f.fp));
        }

        #[test]
        fn scale_invariance(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 1u64..50, k in 1u64..7) {
            let a = metrics_from_confusion(&ConfusionMatrix { tp, fp, fn_, tn }).unwrap();
            let b = metrics_from_confusion(&ConfusionMatrix { tp: tp * k, fp: fp * k, fn_: fn_ * k, tn: tn * k }).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }

        #[test]
        fn accuracy_identity(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            prop_assume!(tp + fn_ > 0 && fp + tn > 0);
            let cm = ConfusionMatrix { tp, fp, fn_, tn };
            let m = metrics_from_confusion(&cm).unwrap();
            let (p, n) = (cm.positives() as f64, cm.negatives() as f64);
            let spec = tn as f64 / n;
            prop_assert!((m.accuracy - (m.recall * p + spec * n) / (p + n)).abs() < 1e-12);
        }
    }
}
