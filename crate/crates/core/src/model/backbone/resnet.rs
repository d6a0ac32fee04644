//! ResNet-101 (bottleneck v1.5) convolutional base.

use candle_core::Tensor;

use super::FeatureExtractor;
use crate::error::Result;
use crate::model::layers::{max_pool_3x3_s2_padded, Activation, ConvBn, Padding};
use crate::model::params::ParamBuilder;

pub const RESNET101_BLOCKS: [usize; 4] = [3, 4, 23, 3];
const EXPANSION: usize = 4;

struct Bottleneck {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    shortcut: Option<ConvBn>,
}

impl Bottleneck {
    fn new(b: &mut ParamBuilder, name: &str, in_c: usize, width: usize, stride: usize) -> Result<Self> {
        let out_c = width * EXPANSION;
        let shortcut = if stride != 1 || in_c != out_c {
            Some(ConvBn::new(b, &format!("{name}.downsample"), in_c, out_c, (1, 1), stride, Padding::Valid, Activation::Identity)?)
        } else {
            None
        };
        Ok(Self {
            reduce: ConvBn::new(b, &format!("{name}.conv1"), in_c, width, (1, 1), 1, Padding::Valid, Activation::Relu)?,
            spatial: ConvBn::new(b, &format!("{name}.conv2"), width, width, (3, 3), stride, Padding::Same, Activation::Relu)?,
            expand: ConvBn::new(b, &format!("{name}.conv3"), width, out_c, (1, 1), 1, Padding::Valid, Activation::Identity)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.expand.forward(&self.spatial.forward(&self.reduce.forward(x)?)?)?;
        let identity = match &self.shortcut {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((y + identity)?.relu()?)
    }
}

pub struct ResNet {
    stem: ConvBn,
    blocks: Vec<Bottleneck>,
}

impl ResNet {
    pub fn new(b: &mut ParamBuilder, layers: [usize; 4]) -> Result<Self> {
        let stem = ConvBn::new(b, "stem", 3, 64, (7, 7), 2, Padding::Same, Activation::Relu)?;
        let mut blocks = Vec::new();
        let mut in_c = 64;
        for (stage, (&n, width)) in layers.iter().zip([64, 128, 256, 512]).enumerate() {
            for i in 0..n {
                let stride = if i == 0 && stage > 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(b, &format!("layer{}.{i}", stage + 1), in_c, width, stride)?);
                in_c = width * EXPANSION;
            }
        }
        Ok(Self { stem, blocks })
    }
}

impl FeatureExtractor for ResNet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = max_pool_3x3_s2_padded(&self.stem.forward(x)?)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        Ok(x)
    }
}
