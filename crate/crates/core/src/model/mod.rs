//! Classifier = backbone feature extractor + custom head.

pub mod backbone;
mod head;
pub mod layers;
pub mod params;
pub mod weights;

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use backbone::{
    build_backbone, BackboneName, BackboneSpec, DenseNetVariant, FeatureExtractor, FeatureShape, WeightsSource,
};
pub use head::{build_head, DenseActivation, Head, HeadConfig, HeadLayer, LAYER_NORM_EPS};
pub use params::{ParamBuilder, ParamStore};

use crate::error::{Error, Result};
use crate::preprocess::{ImageTensor, PreprocessConfig};

/// Probabilities are kept strictly inside (0, 1) even when the logit saturates.
pub const PROB_CLAMP: f64 = 1e-15;

const PREDICT_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub precision: Precision,
    /// Seed for randomly initialised parameters.
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(backbone: BackboneSpec) -> Self {
        Self {
            backbone,
            head: HeadConfig::default(),
            preprocess: PreprocessConfig::default(),
            precision: Precision::default(),
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.head.validate()?;
        self.preprocess.validate()
    }

    fn input(&self) -> (usize, usize) {
        (self.preprocess.target_height, self.preprocess.target_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainablePolicy {
    FreezeBackbone,
    TrainAll,
}

/// Anything that maps preprocessed images to probabilities.
pub trait Scorer: Sync {
    fn score(&self, images: &[ImageTensor]) -> Result<Vec<f64>>;
}

pub struct Classifier {
    config: ModelConfig,
    backbone: Box<dyn FeatureExtractor>,
    backbone_params: ParamStore,
    head: Head,
    head_params: ParamStore,
    feature_shape: FeatureShape,
    policy: TrainablePolicy,
    device: Device,
}

impl std::fmt::Debug for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Classifier")
            .field("backbone", &self.config.backbone.name)
            .field("feature_shape", &self.feature_shape)
            .field("policy", &self.policy)
            .finish()
    }
}

fn split_prefixed(tensors: HashMap<String, Tensor>) -> Result<(HashMap<String, Tensor>, HashMap<String, Tensor>)> {
    let mut backbone = HashMap::new();
    let mut head = HashMap::new();
    for (k, v) in tensors {
        if let Some(rest) = k.strip_prefix("backbone.") {
            backbone.insert(rest.to_string(), v);
        } else if let Some(rest) = k.strip_prefix("head.") {
            head.insert(rest.to_string(), v);
        } else {
            return Err(Error::Assembly(format!("tensor `{k}` belongs to neither backbone nor head")));
        }
    }
    Ok((backbone, head))
}

impl Classifier {
    /// Builds the backbone (random or pretrained) and a freshly initialised
    /// head. The backbone starts frozen.
    pub fn build(config: &ModelConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let built = build_backbone(&config.backbone, config.input(), dtype, device, config.init_seed)?;
        let mut hb = ParamBuilder::random(config.init_seed.wrapping_add(1), dtype, device);
        let head = build_head(&mut hb, &config.head, built.feature_shape)?;
        Self::assemble(config, built.extractor, built.params, head, hb.finish()?, device)
    }

    /// Rebuilds a classifier from a `backbone.*` / `head.*` tensor map.
    pub fn from_tensors(config: &ModelConfig, tensors: HashMap<String, Tensor>, device: &Device) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let (bt, ht) = split_prefixed(tensors)?;
        let built = backbone::build_backbone_from(&config.backbone, bt, config.input(), dtype, device)?;
        let mut hb = ParamBuilder::provided(ht, dtype, device);
        let head = build_head(&mut hb, &config.head, built.feature_shape)?;
        Self::assemble(config, built.extractor, built.params, head, hb.finish()?, device)
    }

    /// Joins a backbone and a head; the head must have been built for the
    /// backbone's probed feature shape.
    pub fn assemble(
        config: &ModelConfig,
        backbone: Box<dyn FeatureExtractor>,
        backbone_params: ParamStore,
        head: Head,
        head_params: ParamStore,
        device: &Device,
    ) -> Result<Self> {
        let feature_shape =
            backbone::probe_feature_shape(backbone.as_ref(), config.input(), config.precision.dtype(), device)?;
        if feature_shape != head.feature_shape() {
            return Err(Error::Assembly(format!(
                "head built for {} features but the backbone produces {feature_shape}",
                head.feature_shape()
            )));
        }
        Ok(Self {
            config: config.clone(),
            backbone,
            backbone_params,
            head,
            head_params,
            feature_shape,
            policy: TrainablePolicy::FreezeBackbone,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    pub fn feature_shape(&self) -> FeatureShape {
        self.feature_shape
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.config.input();
        (h, w, 3)
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_layers(&self) -> Vec<HeadLayer> {
        self.head.layers()
    }

    pub fn backbone_differentiable(&self) -> bool {
        self.backbone.differentiable()
    }

    /// Stacks images into an `N×3×H×W` tensor, checking each shape.
    pub fn input_tensor(&self, images: &[ImageTensor]) -> Result<Tensor> {
        let (h, w, _) = self.input_shape();
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for (i, img) in images.iter().enumerate() {
            if img.shape() != (h, w, 3) {
                return Err(Error::Shape(format!(
                    "image {i} has shape {:?}, model expects {:?}",
                    img.shape(),
                    (h, w, 3)
                )));
            }
            let src = img.data();
            for c in 0..3 {
                data.extend((0..h * w).map(|p| src[p * 3 + c]));
            }
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &self.device)?.to_dtype(self.dtype())?)
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.backbone.forward(x)
    }

    /// Inference-mode logits, shape `(N,)`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.head.forward(&self.features(x)?, None)
    }

    pub fn head_logits(&self, features: &Tensor, dropout: Option<&mut dyn rand::RngCore>) -> Result<Tensor> {
        self.head.forward(features, dropout)
    }

    /// Sigmoid probabilities in (0, 1), computed in chunks.
    pub fn predict_proba(&self, images: &[ImageTensor]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(PREDICT_CHUNK) {
            let logits = self.logits(&self.input_tensor(chunk)?)?;
            out.extend(logits_to_proba(&logits)?);
        }
        Ok(out)
    }

    pub fn set_trainable(&mut self, policy: TrainablePolicy) {
        self.policy = policy;
    }

    pub fn with_trainable(mut self, policy: TrainablePolicy) -> Self {
        self.set_trainable(policy);
        self
    }

    pub fn policy(&self) -> TrainablePolicy {
        self.policy
    }

    /// Variables the optimizer may update under the current policy.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = self.head_params.trainable();
        if self.policy == TrainablePolicy::TrainAll {
            vars.extend(self.backbone_params.trainable());
        }
        vars
    }

    /// `(prefixed parameter name, trainable)` for every variable.
    pub fn trainable_flags(&self) -> Vec<(String, bool)> {
        let backbone_on = self.policy == TrainablePolicy::TrainAll;
        self.backbone_params
            .vars()
            .map(|(k, _)| (format!("backbone.{k}"), backbone_on))
            .chain(self.head_params.vars().map(|(k, _)| (format!("head.{k}"), true)))
            .collect()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.trainable_vars().iter().map(|v| v.elem_count()).sum()
    }

    pub fn head_parameter_count(&self) -> usize {
        self.head_params.parameter_count()
    }

    pub fn backbone_parameter_count(&self) -> usize {
        self.backbone_params.parameter_count()
    }

    pub fn backbone_values(&self) -> Result<Vec<f64>> {
        self.backbone_params.flat_values()
    }

    pub fn head_values(&self) -> Result<Vec<f64>> {
        self.head_params.flat_values()
    }

    /// Sets the output layer's weights and bias to zero, so every
    /// prediction becomes exactly 0.5.
    pub fn zero_output_layer(&mut self) -> Result<()> {
        for name in ["output.weight", "output.bias"] {
            let var = self
                .head_params
                .var(name)
                .ok_or_else(|| Error::Assembly(format!("head has no `{name}`")))?;
            var.set(&var.as_tensor().zeros_like()?)?;
        }
        Ok(())
    }

    /// Every variable and buffer, prefixed `backbone.` or `head.`.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, t) in self.backbone_params.tensors()? {
            out.insert(format!("backbone.{k}"), t);
        }
        for (k, t) in self.head_params.tensors()? {
            out.insert(format!("head.{k}"), t);
        }
        Ok(out)
    }

    /// Independent copy with its own parameter storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let tensors = self.tensors()?.into_iter().collect();
        Ok(Self::from_tensors(&self.config, tensors, &self.device)?.with_trainable(self.policy))
    }
}

impl Scorer for Classifier {
    fn score(&self, images: &[ImageTensor]) -> Result<Vec<f64>> {
        self.predict_proba(images)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn logits_to_proba(logits: &Tensor) -> Result<Vec<f64>> {
    Ok(logits.to_dtype(DType::F64)?.to_vec1::<f64>()?.into_iter().map(sigmoid).collect())
}
