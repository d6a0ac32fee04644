//! Binary cross-entropy, class weighting and the Adam training loop.

mod checkpoint;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, SCHEMA_VERSION};

use crate::dataset::{ClassLabel, DatasetManifest};
use crate::error::{Error, Result};
use crate::model::{logits_to_proba, Classifier, TrainablePolicy};
use crate::preprocess::{encode_label, ImageTensor, PreprocessConfig};

/// Probability clamp used by the loss.
pub const BCE_EPSILON: f64 = 1e-7;
/// Decision threshold for binary accuracy.
pub const ACCURACY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    None,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
    pub policy: TrainablePolicy,
    /// Keep every epoch's training predictions in the history (not persisted).
    pub keep_predictions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-7,
            class_weighting: ClassWeighting::None,
            seed: 42,
            policy: TrainablePolicy::FreezeBackbone,
            keep_predictions: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        for (path, b) in [("train.adam_beta1", self.adam_beta1), ("train.adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(path, format!("{b} is outside [0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("train.adam_epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Scores and labels seen during one training epoch, in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPredictions {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub predictions: Vec<EpochPredictions>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    train_accuracy: f64,
    val_loss: f64,
    val_accuracy: f64,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }

    fn push(&mut self, train_loss: f64, train_accuracy: f64, val_loss: f64, val_accuracy: f64) {
        self.train_loss.push(train_loss);
        self.train_accuracy.push(train_accuracy);
        self.val_loss.push(val_loss);
        self.val_accuracy.push(val_accuracy);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.len() {
            w.serialize(HistoryRow {
                epoch: i + 1,
                train_loss: self.train_loss[i],
                train_accuracy: self.train_accuracy[i],
                val_loss: self.val_loss[i],
                val_accuracy: self.val_accuracy[i],
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let format = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let mut r = csv::Reader::from_path(path).map_err(|e| format(e.to_string()))?;
        let mut h = TrainingHistory::default();
        for (i, row) in r.deserialize::<HistoryRow>().enumerate() {
            let row = row.map_err(|e| format(e.to_string()))?;
            if row.epoch != i + 1 {
                return Err(format(format!("row {} has epoch {}", i + 1, row.epoch)));
            }
            h.push(row.train_loss, row.train_accuracy, row.val_loss, row.val_accuracy);
        }
        Ok(h)
    }
}

/// Weighted mean of the per-sample binary cross-entropy, with predictions
/// clamped to `[ε, 1-ε]`. The weighted mean divides by the sum of weights.
pub fn binary_cross_entropy(y_true: &[u8], y_pred: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Input(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Input("empty loss input".into()));
    }
    if let Some(w) = weights {
        if w.len() != y_true.len() {
            return Err(Error::Input(format!("{} labels but {} weights", y_true.len(), w.len())));
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (&y, &p)) in y_true.iter().zip(y_pred).enumerate() {
        let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        let y = f64::from(y);
        let l = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let w = weights.map_or(1.0, |w| w[i]);
        num += w * l;
        den += w;
    }
    Ok(num / den)
}

/// Differentiable counterpart of [`binary_cross_entropy`] on logits.
pub fn bce_tensor(logits: &Tensor, targets: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let p = candle_nn::ops::sigmoid(logits)?.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)?;
    let one_minus_p = p.affine(-1.0, 1.0)?;
    let one_minus_y = targets.affine(-1.0, 1.0)?;
    let per = ((targets * p.log()?)? + (one_minus_y * one_minus_p.log()?)?)?.neg()?;
    Ok(((per * weights)?.sum_all()? / weights.sum_all()?)?)
}

/// Inverse-frequency weights `N / (2 N_c)`.
pub fn compute_class_weights(counts: &BTreeMap<ClassLabel, usize>) -> Result<BTreeMap<ClassLabel, f64>> {
    let total: usize = ClassLabel::ALL.iter().map(|c| counts.get(c).copied().unwrap_or(0)).sum();
    let mut out = BTreeMap::new();
    for c in ClassLabel::ALL {
        let n = counts.get(&c).copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::Input(format!("class {c} has no samples; cannot weight")));
        }
        out.insert(c, total as f64 / (2.0 * n as f64));
    }
    Ok(out)
}

fn label_counts(labels: &[u8]) -> BTreeMap<ClassLabel, usize> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    BTreeMap::from([(ClassLabel::Healthy, labels.len() - pos), (ClassLabel::Unhealthy, pos)])
}

fn accuracy(labels: &[u8], scores: &[f64]) -> f64 {
    let correct = labels
        .iter()
        .zip(scores)
        .filter(|(&y, &s)| (s >= ACCURACY_THRESHOLD) == (y == 1))
        .count();
    correct as f64 / labels.len() as f64
}

enum Source {
    Memory(Vec<ImageTensor>),
    Files { paths: Vec<PathBuf>, preprocess: PreprocessConfig },
}

/// Labeled images, either already in memory or loaded from disk on demand.
pub struct LabeledSet {
    source: Source,
    labels: Vec<u8>,
}

impl LabeledSet {
    pub fn from_images(images: Vec<ImageTensor>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Input(format!("{} images but {} labels", images.len(), labels.len())));
        }
        Ok(Self { source: Source::Memory(images), labels })
    }

    pub fn from_manifest(manifest: &DatasetManifest, preprocess: &PreprocessConfig) -> Self {
        Self {
            labels: manifest.records().iter().map(|r| encode_label(r.label)).collect(),
            source: Source::Files { paths: manifest.paths(), preprocess: preprocess.clone() },
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Preprocessed images at `idx`, in that order.
    pub fn images(&self, idx: &[usize]) -> Result<Vec<ImageTensor>> {
        match &self.source {
            Source::Memory(v) => Ok(idx.iter().map(|&i| v[i].clone()).collect()),
            Source::Files { paths, preprocess } => {
                idx.par_iter().map(|&i| preprocess.load(&paths[i])).collect()
            }
        }
    }

    pub fn all_images(&self) -> Result<Vec<ImageTensor>> {
        self.images(&(0..self.len()).collect::<Vec<_>>())
    }
}

const FEATURE_CHUNK: usize = 16;

/// Backbone features for the whole set, in order, detached from the graph.
fn feature_cache(model: &Classifier, set: &LabeledSet) -> Result<Tensor> {
    let mut parts = Vec::new();
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(FEATURE_CHUNK) {
        let x = model.input_tensor(&set.images(chunk)?)?;
        parts.push(model.features(&x)?.detach());
    }
    Ok(Tensor::cat(&parts, 0)?)
}

/// One optimizer plus the RNG driving dropout.
pub struct Trainer {
    optimizer: AdamW,
    dropout_rng: ChaCha8Rng,
    class_weights: Option<[f64; 2]>,
}

impl Trainer {
    /// Applies the configured trainable policy to `model` and creates an
    /// Adam optimizer over the resulting trainable variables.
    pub fn new(model: &mut Classifier, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        model.set_trainable(config.policy);
        let params = ParamsAdamW {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_epsilon,
            weight_decay: 0.0,
        };
        let optimizer = AdamW::new(model.trainable_vars(), params)?;
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
        dropout_rng.set_stream(1);
        Ok(Self { optimizer, dropout_rng, class_weights: None })
    }

    pub fn set_class_weights(&mut self, weights: &BTreeMap<ClassLabel, f64>) {
        self.class_weights = Some([weights[&ClassLabel::Healthy], weights[&ClassLabel::Unhealthy]]);
    }

    fn sample_weights(&self, labels: &[u8]) -> Vec<f64> {
        match self.class_weights {
            Some(w) => labels.iter().map(|&y| w[usize::from(y)]).collect(),
            None => vec![1.0; labels.len()],
        }
    }

    /// One Adam step on precomputed backbone features. Returns the batch
    /// loss and the training-mode probabilities.
    pub fn step_on_features(&mut self, model: &Classifier, features: &Tensor, labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        let dtype = model.dtype();
        let device = model.device();
        let logits = model.head_logits(features, Some(&mut self.dropout_rng))?;
        let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
        let targets = Tensor::from_vec(y, labels.len(), device)?.to_dtype(dtype)?;
        let w = Tensor::from_vec(self.sample_weights(labels), labels.len(), device)?.to_dtype(dtype)?;
        let loss = bce_tensor(&logits, &targets, &w)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        self.optimizer.backward_step(&loss)?;
        Ok((value, logits_to_proba(&logits.detach())?))
    }

    /// One Adam step on a batch of preprocessed images.
    pub fn train_step(&mut self, model: &Classifier, images: &[ImageTensor], labels: &[u8]) -> Result<f64> {
        let x = model.input_tensor(images)?;
        let mut features = model.features(&x)?;
        if model.policy() == TrainablePolicy::FreezeBackbone {
            features = features.detach();
        }
        Ok(self.step_on_features(model, &features, labels)?.0)
    }
}

fn validation_pass(model: &Classifier, set: &LabeledSet, cache: Option<&Tensor>) -> Result<(f64, f64)> {
    let scores = match cache {
        Some(f) => {
            let mut s = Vec::with_capacity(set.len());
            for start in (0..set.len()).step_by(FEATURE_CHUNK) {
                let len = FEATURE_CHUNK.min(set.len() - start);
                s.extend(logits_to_proba(&model.head_logits(&f.narrow(0, start, len)?, None)?)?);
            }
            s
        }
        None => model.predict_proba(&set.all_images()?)?,
    };
    Ok((binary_cross_entropy(set.labels(), &scores, None)?, accuracy(set.labels(), &scores)))
}

/// Runs exactly `config.epochs` epochs. Training order is reshuffled every
/// epoch from `config.seed`; train loss/accuracy are averaged over the
/// epoch's batches (training mode), validation metrics use inference mode.
pub fn train(
    model: &mut Classifier,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    config: &TrainConfig,
) -> Result<TrainingHistory> {
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Input("validation set is empty".into()));
    }
    let mut trainer = Trainer::new(model, config)?;
    if config.class_weighting == ClassWeighting::Balanced {
        trainer.set_class_weights(&compute_class_weights(&label_counts(train_set.labels()))?);
    }
    let frozen = model.policy() == TrainablePolicy::FreezeBackbone;
    let (train_cache, val_cache) = if frozen {
        log::info!("caching backbone features for {} + {} images", train_set.len(), val_set.len());
        (Some(feature_cache(model, train_set)?), Some(feature_cache(model, val_set)?))
    } else {
        (None, None)
    };

    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainingHistory::default();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut labels_seen = Vec::with_capacity(order.len());
        let mut scores_seen = Vec::with_capacity(order.len());
        for batch in order.chunks(config.batch_size) {
            let labels: Vec<u8> = batch.iter().map(|&i| train_set.labels()[i]).collect();
            let features = match &train_cache {
                Some(cache) => {
                    let idx: Vec<u32> = batch.iter().map(|&i| i as u32).collect();
                    cache.index_select(&Tensor::new(idx, cache.device())?, 0)?
                }
                None => model.features(&model.input_tensor(&train_set.images(batch)?)?)?,
            };
            let (loss, scores) = trainer.step_on_features(model, &features, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            labels_seen.extend(labels);
            scores_seen.extend(scores);
        }
        let train_loss = loss_sum / seen as f64;
        let train_acc = accuracy(&labels_seen, &scores_seen);
        let (val_loss, val_acc) = validation_pass(model, val_set, val_cache.as_ref())?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        log::info!(
            "epoch {epoch}/{}: loss {train_loss:.4} acc {train_acc:.4} val_loss {val_loss:.4} val_acc {val_acc:.4}",
            config.epochs
        );
        history.push(train_loss, train_acc, val_loss, val_acc);
        if config.keep_predictions {
            history.predictions.push(EpochPredictions { labels: labels_seen, scores: scores_seen });
        }
    }
    Ok(history)
}
