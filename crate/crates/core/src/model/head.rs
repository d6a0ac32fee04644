//! The custom classification head stacked on top of a backbone:
//! layer norm → conv + ReLU → max pool → dropout → flatten → dense → dense(1, sigmoid).

use candle_core::{Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::FeatureShape;
use super::layers::{max_pool, Conv2d, Linear, Padding};
use super::params::{Init, ParamBuilder};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseActivation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub pool_size: usize,
    pub dropout_rate: f64,
    pub dense_units: usize,
    pub dense_activation: DenseActivation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            conv_filters: 1024,
            conv_kernel: 3,
            pool_size: 2,
            dropout_rate: 0.3,
            dense_units: 512,
            dense_activation: DenseActivation::Relu,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("head.conv_filters", self.conv_filters),
            ("head.conv_kernel", self.conv_kernel),
            ("head.pool_size", self.pool_size),
            ("head.dense_units", self.dense_units),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(
                "head.dropout_rate",
                format!("{} is outside [0, 1)", self.dropout_rate),
            ));
        }
        Ok(())
    }

    /// Length of the flattened vector after pooling.
    pub fn flat_len(&self, feature: FeatureShape) -> usize {
        (feature.height / self.pool_size) * (feature.width / self.pool_size) * self.conv_filters
    }

    /// Closed-form number of trainable scalars in the head.
    pub fn parameter_count(&self, feature: FeatureShape) -> usize {
        let c = feature.channels;
        let k = self.conv_kernel;
        let norm = 2 * c;
        let conv = k * k * c * self.conv_filters + self.conv_filters;
        let dense = self.flat_len(feature) * self.dense_units + self.dense_units;
        let out = self.dense_units + 1;
        norm + conv + dense + out
    }
}

/// Structural description of one head layer, in forward order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum HeadLayer {
    LayerNorm { channels: usize },
    Conv2d { filters: usize, kernel: usize, activation: &'static str },
    MaxPool { size: usize },
    Dropout { rate: f64 },
    Flatten { len: usize },
    Dense { units: usize, activation: &'static str },
    Output { units: usize, activation: &'static str },
}

pub struct Head {
    config: HeadConfig,
    feature_shape: FeatureShape,
    norm_scale: Tensor,
    norm_shift: Tensor,
    conv: Conv2d,
    dense: Linear,
    output: Linear,
}

/// Builds the head for a feature map of `feature_shape`.
pub fn build_head(b: &mut ParamBuilder, config: &HeadConfig, feature_shape: FeatureShape) -> Result<Head> {
    config.validate()?;
    if feature_shape.height < config.pool_size || feature_shape.width < config.pool_size {
        return Err(Error::config(
            "head.pool_size",
            format!("feature map {feature_shape} is smaller than the {0}x{0} pool", config.pool_size),
        ));
    }
    let c = feature_shape.channels;
    let norm_scale = b.var("norm.gamma", &[c], Init::Ones)?;
    let norm_shift = b.var("norm.beta", &[c], Init::Zeros)?;
    let k = config.conv_kernel;
    let conv = Conv2d::new(b, "conv", c, config.conv_filters, (k, k), 1, Padding::Same, true)?;
    let dense = Linear::new(b, "dense", config.flat_len(feature_shape), config.dense_units)?;
    let output = Linear::new(b, "output", config.dense_units, 1)?;
    Ok(Head { config: config.clone(), feature_shape, norm_scale, norm_shift, conv, dense, output })
}

impl Head {
    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn feature_shape(&self) -> FeatureShape {
        self.feature_shape
    }

    pub fn layers(&self) -> Vec<HeadLayer> {
        let dense_act = match self.config.dense_activation {
            DenseActivation::Relu => "relu",
            DenseActivation::Linear => "linear",
        };
        vec![
            HeadLayer::LayerNorm { channels: self.feature_shape.channels },
            HeadLayer::Conv2d { filters: self.config.conv_filters, kernel: self.config.conv_kernel, activation: "relu" },
            HeadLayer::MaxPool { size: self.config.pool_size },
            HeadLayer::Dropout { rate: self.config.dropout_rate },
            HeadLayer::Flatten { len: self.config.flat_len(self.feature_shape) },
            HeadLayer::Dense { units: self.config.dense_units, activation: dense_act },
            HeadLayer::Output { units: 1, activation: "sigmoid" },
        ]
    }

    /// Per-sample normalisation over channels and spatial positions together,
    /// with a learned per-channel scale and shift.
    fn layer_norm(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let flat = x.reshape((n, c * h * w))?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let centred = flat.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&var.affine(1.0, LAYER_NORM_EPS)?.sqrt()?)?;
        let shape = (1, c, 1, 1);
        Ok(normed
            .reshape((n, c, h, w))?
            .broadcast_mul(&self.norm_scale.reshape(shape)?)?
            .broadcast_add(&self.norm_shift.reshape(shape)?)?)
    }

    /// Pre-sigmoid logits, shape `(N,)`. Dropout is applied only when an RNG
    /// is supplied (training mode).
    pub fn forward(&self, features: &Tensor, dropout: Option<&mut dyn rand::RngCore>) -> Result<Tensor> {
        let (n, c, h, w) = features.dims4()?;
        let expected = self.feature_shape;
        if (c, h, w) != (expected.channels, expected.height, expected.width) {
            return Err(Error::Shape(format!(
                "head expects {expected} features, got {h}x{w}x{c}"
            )));
        }
        let x = self.layer_norm(features)?;
        let x = self.conv.forward(&x)?.relu()?;
        let mut x = max_pool(&x, self.config.pool_size, self.config.pool_size)?;
        if let Some(rng) = dropout {
            let rate = self.config.dropout_rate;
            if rate > 0.0 {
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..x.elem_count())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
                x = (x * mask)?;
            }
        }
        let x = x.flatten_from(1)?;
        let x = self.dense.forward(&x)?;
        let x = match self.config.dense_activation {
            DenseActivation::Relu => x.relu()?,
            DenseActivation::Linear => x,
        };
        Ok(self.output.forward(&x)?.reshape(n)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn shape(h: usize, w: usize, c: usize) -> FeatureShape {
        FeatureShape { height: h, width: w, channels: c }
    }

    #[test]
    fn default_head_shape_arithmetic() {
        let cfg = HeadConfig::default();
        let f = shape(8, 8, 2048);
        assert_eq!(cfg.flat_len(f), 16384);
        let mut b = ParamBuilder::random(0, DType::F32, &Device::Cpu);
        let head = build_head(&mut b, &cfg, f).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 2048, 8, 8), &Device::Cpu).unwrap();
        assert_eq!(head.forward(&x, None).unwrap().dims(), &[2]);
        let store = b.finish().unwrap();
        assert_eq!(store.parameter_count(), cfg.parameter_count(f));
    }

    #[test]
    fn tiny_feature_map() {
        let cfg = HeadConfig { conv_filters: 4, dense_units: 3, ..HeadConfig::default() };
        let f = shape(2, 2, 4);
        assert_eq!(cfg.flat_len(f), 4);
        let mut b = ParamBuilder::random(0, DType::F64, &Device::Cpu);
        let head = build_head(&mut b, &cfg, f).unwrap();
        assert_eq!(head.layers()[4], HeadLayer::Flatten { len: 4 });
        let x = Tensor::randn(0f64, 1.0, (3, 4, 2, 2), &Device::Cpu).unwrap();
        assert_eq!(head.forward(&x, None).unwrap().dims(), &[3]);
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = HeadConfig { dropout_rate: 1.0, ..HeadConfig::default() };
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "head.dropout_rate"),
            other => panic!("unexpected {other:?}"),
        }
        let mut b = ParamBuilder::random(0, DType::F32, &Device::Cpu);
        let r = build_head(&mut b, &HeadConfig { pool_size: 3, ..HeadConfig::default() }, shape(2, 2, 4));
        assert!(matches!(r, Err(Error::Config { .. })));
    }

    #[test]
    fn layer_order() {
        let mut b = ParamBuilder::random(0, DType::F32, &Device::Cpu);
        let head = build_head(&mut b, &HeadConfig::default(), shape(4, 4, 8)).unwrap();
        let kinds: Vec<&str> = head
            .layers()
            .iter()
            .map(|l| match l {
                HeadLayer::LayerNorm { .. } => "layer_norm",
                HeadLayer::Conv2d { .. } => "conv2d",
                HeadLayer::MaxPool { .. } => "max_pool",
                HeadLayer::Dropout { .. } => "dropout",
                HeadLayer::Flatten { .. } => "flatten",
                HeadLayer::Dense { .. } => "dense",
                HeadLayer::Output { .. } => "output",
            })
            .collect();
        assert_eq!(kinds, ["layer_norm", "conv2d", "max_pool", "dropout", "flatten", "dense", "output"]);
    }
}
