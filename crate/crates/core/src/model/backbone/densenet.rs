//! DenseNet convolutional base (pre-activation dense blocks).

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::FeatureExtractor;
use crate::error::Result;
use crate::model::layers::{max_pool_3x3_s2_padded, Activation, BatchNorm, Conv2d, ConvBn, Padding};
use crate::model::params::ParamBuilder;

const GROWTH: usize = 32;
const BOTTLENECK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DenseNetVariant {
    #[default]
    #[serde(rename = "121")]
    D121,
    #[serde(rename = "169")]
    D169,
    #[serde(rename = "201")]
    D201,
}

impl DenseNetVariant {
    pub fn blocks(self) -> [usize; 4] {
        match self {
            DenseNetVariant::D121 => [6, 12, 24, 16],
            DenseNetVariant::D169 => [6, 12, 32, 32],
            DenseNetVariant::D201 => [6, 12, 48, 32],
        }
    }

    /// Channels of the final feature map.
    pub fn out_channels(self) -> usize {
        let mut c = 64;
        for (i, n) in self.blocks().iter().enumerate() {
            c += n * GROWTH;
            if i < 3 {
                c /= 2;
            }
        }
        c
    }
}

struct PreActConv {
    bn: BatchNorm,
    conv: Conv2d,
}

impl PreActConv {
    fn new(b: &mut ParamBuilder, name: &str, in_c: usize, out_c: usize, k: usize) -> Result<Self> {
        Ok(Self {
            bn: BatchNorm::new(b, &format!("{name}.bn"), in_c, 1.001e-5)?,
            conv: Conv2d::new(b, &format!("{name}.conv"), in_c, out_c, (k, k), 1, Padding::Same, false)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(&self.bn.forward(x)?.relu()?)
    }
}

enum Stage {
    Dense(Vec<[PreActConv; 2]>),
    Transition(PreActConv),
}

pub struct DenseNet {
    stem: ConvBn,
    stages: Vec<Stage>,
    final_bn: BatchNorm,
}

impl DenseNet {
    pub fn new(b: &mut ParamBuilder, variant: DenseNetVariant) -> Result<Self> {
        let stem = ConvBn::new(b, "stem", 3, 64, (7, 7), 2, Padding::Same, Activation::Relu)?;
        let mut stages = Vec::new();
        let mut c = 64;
        for (i, &n) in variant.blocks().iter().enumerate() {
            let mut layers = Vec::new();
            for j in 0..n {
                let name = format!("block{}.layer{j}", i + 1);
                layers.push([
                    PreActConv::new(b, &format!("{name}.1"), c, BOTTLENECK * GROWTH, 1)?,
                    PreActConv::new(b, &format!("{name}.2"), BOTTLENECK * GROWTH, GROWTH, 3)?,
                ]);
                c += GROWTH;
            }
            stages.push(Stage::Dense(layers));
            if i < 3 {
                stages.push(Stage::Transition(PreActConv::new(b, &format!("transition{}", i + 1), c, c / 2, 1)?));
                c /= 2;
            }
        }
        let final_bn = BatchNorm::new(b, "final_bn", c, 1.001e-5)?;
        Ok(Self { stem, stages, final_bn })
    }
}

impl FeatureExtractor for DenseNet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = max_pool_3x3_s2_padded(&self.stem.forward(x)?)?;
        for stage in &self.stages {
            x = match stage {
                Stage::Dense(layers) => {
                    let mut features = vec![x];
                    for [a, b] in layers {
                        let input = Tensor::cat(&features, 1)?;
                        features.push(b.forward(&a.forward(&input)?)?);
                    }
                    Tensor::cat(&features, 1)?
                }
                Stage::Transition(t) => t.forward(&x)?.avg_pool2d(2)?,
            };
        }
        Ok(self.final_bn.forward(&x)?.relu()?)
    }
}
