//! JSON run configuration for the `sonoclass` binary. Unknown keys are
//! rejected and errors name the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::interpretability::LimeConfig;
use crate::model::{BackboneName, BackboneSpec, HeadConfig, ModelConfig, Precision, WeightsSource};
use crate::preprocess::PreprocessConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

fn default_backbone() -> BackboneSpec {
    BackboneSpec::new(BackboneName::InceptionV3, WeightsSource::Imagenet)
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default = "default_backbone")]
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub lime: LimeConfig,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub precision: Precision,
    /// Seed for random parameter initialisation.
    #[serde(default)]
    pub init_seed: u64,
    /// Decision threshold for evaluation and predictions.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            backbone: default_backbone(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            lime: LimeConfig::default(),
            paths: Paths::default(),
            precision: Precision::default(),
            init_seed: 0,
            threshold: default_threshold(),
        }
    }
}

impl RunConfig {
    /// Parses JSON text; schema errors carry the JSON path of the bad key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.backbone.validate()?;
        self.head.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        self.lime.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", format!("{} is outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            head: self.head.clone(),
            preprocess: self.preprocess.clone(),
            precision: self.precision,
            init_seed: self.init_seed,
        }
    }

    /// One seed for every stochastic stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.split.seed = seed;
        self.lime.seed = seed;
        self.init_seed = seed;
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}
