//! Backbone registry. Every backbone is a convolutional base without its
//! classification top, mapping `N×3×H×W` images to an `N×C×H'×W'` feature map.

mod densenet;
mod efficientnet;
mod inception;
mod resnet;
mod tiny;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use densenet::DenseNetVariant;
pub use efficientnet::{round_filters, round_repeats};
pub use tiny::TINY_CHANNELS;

use super::params::{ParamBuilder, ParamStore};
use super::weights;
use crate::error::{Error, Result};

pub trait FeatureExtractor: Send + Sync {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;

    /// Whether gradients with respect to the input are available.
    fn differentiable(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneName {
    InceptionV3,
    Resnet101,
    EfficientnetB7,
    RadimagenetDensenet,
    TinyTestCnn,
}

impl BackboneName {
    pub const ALL: [BackboneName; 5] = [
        BackboneName::InceptionV3,
        BackboneName::Resnet101,
        BackboneName::EfficientnetB7,
        BackboneName::RadimagenetDensenet,
        BackboneName::TinyTestCnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::InceptionV3 => "inception_v3",
            BackboneName::Resnet101 => "resnet101",
            BackboneName::EfficientnetB7 => "efficientnet_b7",
            BackboneName::RadimagenetDensenet => "radimagenet_densenet",
            BackboneName::TinyTestCnn => "tiny_test_cnn",
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Registry(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSource {
    Imagenet,
    Radimagenet,
    Random,
}

impl WeightsSource {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightsSource::Imagenet => "imagenet",
            WeightsSource::Radimagenet => "radimagenet",
            WeightsSource::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub weights_source: WeightsSource,
    #[serde(default)]
    pub include_top: bool,
    /// Depth variant, only meaningful for `radimagenet_densenet`.
    #[serde(default)]
    pub densenet_variant: DenseNetVariant,
    /// Explicit safetensors file; defaults to `<cache>/<name>-<source>.safetensors`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
    /// Where to fetch the weights from when the file is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_url: Option<String>,
    /// Expected SHA-256 of the weights file, lowercase hex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_sha256: Option<String>,
}

impl BackboneSpec {
    pub fn new(name: BackboneName, weights_source: WeightsSource) -> Self {
        Self {
            name,
            weights_source,
            include_top: false,
            densenet_variant: DenseNetVariant::default(),
            weights_path: None,
            weights_url: None,
            weights_sha256: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.include_top {
            return Err(Error::config(
                "backbone.include_top",
                "backbones are always used without their classification top",
            ));
        }
        use BackboneName as N;
        use WeightsSource as W;
        match (self.name, self.weights_source) {
            (N::RadimagenetDensenet, W::Imagenet) | (N::TinyTestCnn, W::Imagenet | W::Radimagenet) => {
                Err(Error::config(
                    "backbone.weights_source",
                    format!("{} weights are not available for {}", self.weights_source.as_str(), self.name),
                ))
            }
            (n, W::Radimagenet) if n != N::RadimagenetDensenet => Err(Error::config(
                "backbone.weights_source",
                "radimagenet weights only pair with radimagenet_densenet",
            )),
            _ => Ok(()),
        }
    }
}

/// Spatial size and channel count of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

pub struct BuiltBackbone {
    pub extractor: Box<dyn FeatureExtractor>,
    pub params: ParamStore,
    pub feature_shape: FeatureShape,
    pub input_shape: (usize, usize),
}

fn construct(spec: &BackboneSpec, b: &mut ParamBuilder) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match spec.name {
        BackboneName::TinyTestCnn => Box::new(tiny::TinyCnn::new(b)?),
        BackboneName::InceptionV3 => Box::new(inception::InceptionV3::new(b)?),
        BackboneName::Resnet101 => Box::new(resnet::ResNet::new(b, resnet::RESNET101_BLOCKS)?),
        BackboneName::EfficientnetB7 => Box::new(efficientnet::EfficientNet::new(b, efficientnet::B7)?),
        BackboneName::RadimagenetDensenet => Box::new(densenet::DenseNet::new(b, spec.densenet_variant)?),
    })
}

/// Runs one zero image through the extractor and records the output shape.
pub fn probe_feature_shape(
    extractor: &dyn FeatureExtractor,
    input: (usize, usize),
    dtype: DType,
    device: &Device,
) -> Result<FeatureShape> {
    let x = Tensor::zeros((1, 3, input.0, input.1), dtype, device)?;
    let y = extractor.forward(&x).map_err(|e| {
        Error::Shape(format!("input {}x{} is not accepted by the backbone: {e}", input.0, input.1))
    })?;
    match *y.dims() {
        [1, c, h, w] if c > 0 && h > 0 && w > 0 => Ok(FeatureShape { height: h, width: w, channels: c }),
        ref other => Err(Error::Shape(format!("backbone produced shape {other:?}"))),
    }
}

fn assemble(
    spec: &BackboneSpec,
    mut builder: ParamBuilder,
    input: (usize, usize),
) -> Result<BuiltBackbone> {
    let extractor = construct(spec, &mut builder)?;
    let (dtype, device) = (builder.dtype(), builder.device().clone());
    let params = builder.finish()?;
    let feature_shape = probe_feature_shape(extractor.as_ref(), input, dtype, &device)?;
    Ok(BuiltBackbone { extractor, params, feature_shape, input_shape: input })
}

/// Builds the named backbone for `input` = (height, width). Random weights
/// are drawn from `seed`; pretrained weights are resolved from disk (or
/// fetched) and must cover every parameter exactly.
pub fn build_backbone(
    spec: &BackboneSpec,
    input: (usize, usize),
    dtype: DType,
    device: &Device,
    seed: u64,
) -> Result<BuiltBackbone> {
    spec.validate()?;
    let builder = match spec.weights_source {
        WeightsSource::Random => ParamBuilder::random(seed, dtype, device),
        _ => {
            let tensors = weights::resolve(spec, device)?;
            ParamBuilder::provided(tensors, dtype, device)
        }
    };
    assemble(spec, builder, input).map_err(|e| match (spec.weights_source, e) {
        (WeightsSource::Random, e) => e,
        (_, Error::Assembly(reason) | Error::Shape(reason)) => weights_format_error(spec, reason),
        (_, e) => e,
    })
}

fn weights_format_error(spec: &BackboneSpec, reason: String) -> Error {
    Error::Weights(crate::error::WeightsError::Format {
        path: weights::weights_file(spec),
        reason,
    })
}

/// Rebuilds a backbone from an explicit tensor map (checkpoints, deep copies).
pub fn build_backbone_from(
    spec: &BackboneSpec,
    tensors: HashMap<String, Tensor>,
    input: (usize, usize),
    dtype: DType,
    device: &Device,
) -> Result<BuiltBackbone> {
    spec.validate()?;
    assemble(spec, ParamBuilder::provided(tensors, dtype, device), input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(name: BackboneName, size: usize) -> BuiltBackbone {
        build_backbone(&BackboneSpec::new(name, WeightsSource::Random), (size, size), DType::F32, &Device::Cpu, 0)
            .unwrap()
    }

    #[test]
    fn tiny_shape() {
        let b = probe(BackboneName::TinyTestCnn, 64);
        assert_eq!(b.feature_shape, FeatureShape { height: 8, width: 8, channels: 32 });
    }

    #[test]
    fn inception_probe_at_256() {
        let b = probe(BackboneName::InceptionV3, 256);
        assert_eq!(b.feature_shape.channels, 2048);
        // recorded by probing: 256 -> 127 -> 125 -> 62 -> 60 -> 29 -> 14 -> 6
        assert_eq!((b.feature_shape.height, b.feature_shape.width), (6, 6));
        // Keras reports 21,802,784 parameters without the top; we also learn
        // a BN scale (Keras uses scale=False) which adds one value per BN channel.
        let bn_scales = b.params.vars().filter(|(k, _)| k.ends_with(".bn.gamma")).map(|(_, v)| v.elem_count()).sum::<usize>();
        assert_eq!(b.params.parameter_count() + b.params.buffer_count() - bn_scales, 21_802_784);
    }

    #[test]
    fn resnet101_probe() {
        let b = probe(BackboneName::Resnet101, 64);
        assert_eq!(b.feature_shape, FeatureShape { height: 2, width: 2, channels: 2048 });
        // torchvision resnet101 without fc: 44,549,160 - 2,049,000
        assert_eq!(b.params.parameter_count(), 42_500_160);
    }

    #[test]
    fn efficientnet_b7_probe() {
        let b = probe(BackboneName::EfficientnetB7, 64);
        assert_eq!(b.feature_shape, FeatureShape { height: 2, width: 2, channels: 2560 });
    }

    #[test]
    fn densenet_probe() {
        let b = probe(BackboneName::RadimagenetDensenet, 64);
        assert_eq!(b.feature_shape, FeatureShape { height: 2, width: 2, channels: 1024 });
        assert_eq!(DenseNetVariant::D169.out_channels(), 1664);
        assert_eq!(DenseNetVariant::D201.out_channels(), 1920);
    }

    #[test]
    fn too_small_input_is_a_shape_error() {
        let spec = BackboneSpec::new(BackboneName::InceptionV3, WeightsSource::Random);
        let r = build_backbone(&spec, (32, 32), DType::F32, &Device::Cpu, 0);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn pairing_rules() {
        let bad = BackboneSpec::new(BackboneName::RadimagenetDensenet, WeightsSource::Imagenet);
        assert!(bad.validate().is_err());
        let bad = BackboneSpec::new(BackboneName::Resnet101, WeightsSource::Radimagenet);
        assert!(bad.validate().is_err());
        let bad = BackboneSpec { include_top: true, ..BackboneSpec::new(BackboneName::InceptionV3, WeightsSource::Random) };
        assert!(bad.validate().is_err());
        assert!(BackboneSpec::new(BackboneName::RadimagenetDensenet, WeightsSource::Radimagenet).validate().is_ok());
        assert!(matches!("vit".parse::<BackboneName>(), Err(Error::Registry(_))));
        assert_eq!("efficientnet_b7".parse::<BackboneName>().unwrap(), BackboneName::EfficientnetB7);
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = probe(BackboneName::TinyTestCnn, 32);
        let b = probe(BackboneName::TinyTestCnn, 32);
        assert_eq!(a.params.flat_values().unwrap(), b.params.flat_values().unwrap());
    }
}
