use candle_core::Tensor;

use super::FeatureExtractor;
use crate::error::Result;
use crate::model::layers::{max_pool, Conv2d, Padding};
use crate::model::params::ParamBuilder;

/// Channel widths of the three conv blocks.
pub const TINY_CHANNELS: [usize; 3] = [8, 16, 32];

/// Three `conv3x3 + ReLU + maxpool2` blocks: `H×W×3 → H/8 × W/8 × 32`.
pub struct TinyCnn {
    convs: Vec<Conv2d>,
}

impl TinyCnn {
    pub fn new(b: &mut ParamBuilder) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_c = 3;
        for (i, &c) in TINY_CHANNELS.iter().enumerate() {
            convs.push(Conv2d::new(b, &format!("block{i}.conv"), in_c, c, (3, 3), 1, Padding::Same, true)?);
            in_c = c;
        }
        Ok(Self { convs })
    }
}

impl FeatureExtractor for TinyCnn {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for conv in &self.convs {
            x = max_pool(&conv.forward(&x)?.relu()?, 2, 2)?;
        }
        Ok(x)
    }
}
