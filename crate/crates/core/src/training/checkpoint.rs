//! Checkpoint directory: `weights.safetensors`, `model.json`, `history.csv`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainingHistory};
use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::model::{BackboneName, Classifier, ModelConfig, TrainablePolicy};

pub const SCHEMA_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const META_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub policy: TrainablePolicy,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
}

pub struct Checkpoint {
    pub model: Classifier,
    pub history: TrainingHistory,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(
    model: &Classifier,
    history: &TrainingHistory,
    train: Option<&TrainConfig>,
    split: Option<&SplitSpec>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors: HashMap<String, _> = model.tensors()?.into_iter().collect();
    candle_core::safetensors::save(&tensors, dir.join(WEIGHTS_FILE))?;
    let meta = CheckpointMeta {
        schema_version: SCHEMA_VERSION,
        model: model.config().clone(),
        policy: model.policy(),
        train: train.cloned(),
        split: split.cloned(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;
    history.write_csv(&dir.join(HISTORY_FILE))
}

fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let format = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let text = fs::read_to_string(path).map_err(|e| format(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Incompatible(format!(
                "{} has schema_version {v}, this build reads {SCHEMA_VERSION}",
                path.display()
            )))
        }
        None => return Err(format("missing schema_version".into())),
    }
    if let Some(name) = value.pointer("/model/backbone/name").and_then(|v| v.as_str()) {
        name.parse::<BackboneName>()?;
    }
    let meta: CheckpointMeta = serde_json::from_value(value).map_err(|e| format(e.to_string()))?;
    meta.model.validate()?;
    Ok(meta)
}

/// Loads a checkpoint directory. The sidecar is validated before any
/// weights are read.
pub fn load_checkpoint(dir: &Path, device: &Device) -> Result<Checkpoint> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::NotFound(meta_path));
    }
    let meta = read_meta(&meta_path)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    if !weights_path.exists() {
        return Err(Error::NotFound(weights_path));
    }
    let tensors = candle_core::safetensors::load(&weights_path, device).map_err(|e| Error::Format {
        path: weights_path.clone(),
        reason: e.to_string(),
    })?;
    let model = Classifier::from_tensors(&meta.model, tensors, device)
        .map_err(|e| match e {
            Error::Assembly(r) | Error::Shape(r) => Error::Incompatible(format!("{}: {r}", weights_path.display())),
            e => e,
        })?
        .with_trainable(meta.policy);
    let history_path = dir.join(HISTORY_FILE);
    let history = if history_path.exists() {
        TrainingHistory::read_csv(&history_path)?
    } else {
        TrainingHistory::default()
    };
    Ok(Checkpoint { model, history, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneSpec, HeadConfig, WeightsSource};
    use crate::preprocess::{ImageTensor, Normalization, PreprocessConfig};

    fn model() -> Classifier {
        let cfg = ModelConfig {
            head: HeadConfig { conv_filters: 4, dense_units: 4, ..HeadConfig::default() },
            preprocess: PreprocessConfig { target_height: 32, target_width: 32, normalization: Normalization::InceptionMinus1To1 },
            init_seed: 5,
            ..ModelConfig::new(BackboneSpec::new(BackboneName::TinyTestCnn, WeightsSource::Random))
        };
        Classifier::build(&cfg, &Device::Cpu).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        let h = TrainingHistory { train_loss: vec![0.3], train_accuracy: vec![1.0], val_loss: vec![0.4], val_accuracy: vec![0.5], predictions: vec![] };
        save_checkpoint(&m, &h, None, None, dir.path()).unwrap();
        let ck = load_checkpoint(dir.path(), &Device::Cpu).unwrap();
        let probe: Vec<ImageTensor> = [-0.5, 0.0, 0.9]
            .iter()
            .map(|&v| ImageTensor::filled(32, 32, v, (-1.0, 1.0)).unwrap())
            .collect();
        assert_eq!(m.predict_proba(&probe).unwrap(), ck.model.predict_proba(&probe).unwrap());
        assert_eq!(ck.history, h);
    }

    #[test]
    fn schema_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model(), &TrainingHistory::default(), None, None, dir.path()).unwrap();
        let p = dir.path().join(META_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_checkpoint(dir.path(), &Device::Cpu), Err(Error::Incompatible(_))));
    }

    #[test]
    fn missing_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(&dir.path().join("nope"), &Device::Cpu), Err(Error::NotFound(_))));
        save_checkpoint(&model(), &TrainingHistory::default(), None, None, dir.path()).unwrap();
        fs::write(dir.path().join(WEIGHTS_FILE), b"garbage").unwrap();
        assert!(matches!(load_checkpoint(dir.path(), &Device::Cpu), Err(Error::Format { .. })));
    }
}
