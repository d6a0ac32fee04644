//! EfficientNet convolutional base (MBConv with squeeze-excitation, swish).

use candle_core::Tensor;

use super::FeatureExtractor;
use crate::error::Result;
use crate::model::layers::{global_avg_pool, Activation, BatchNorm, Conv2d, ConvBn, DepthwiseConv2d, Padding};
use crate::model::params::ParamBuilder;

/// `(kernel, stride, expand_ratio, in_filters, out_filters, repeats)` of the B0 baseline.
const BASE_BLOCKS: [(usize, usize, usize, usize, usize, usize); 7] = [
    (3, 1, 1, 32, 16, 1),
    (3, 2, 6, 16, 24, 2),
    (5, 2, 6, 24, 40, 2),
    (3, 2, 6, 40, 80, 3),
    (5, 1, 6, 80, 112, 3),
    (5, 2, 6, 112, 192, 4),
    (3, 1, 6, 192, 320, 1),
];

#[derive(Debug, Clone, Copy)]
pub struct Scaling {
    pub width: f64,
    pub depth: f64,
}

pub const B7: Scaling = Scaling { width: 2.0, depth: 3.1 };

pub fn round_filters(filters: usize, width: f64) -> usize {
    let divisor = 8.0;
    let f = filters as f64 * width;
    let mut out = ((f + divisor / 2.0) / divisor).floor() * divisor;
    out = out.max(divisor);
    if out < 0.9 * f {
        out += divisor;
    }
    out as usize
}

pub fn round_repeats(repeats: usize, depth: f64) -> usize {
    (repeats as f64 * depth).ceil() as usize
}

struct SqueezeExcite {
    reduce: Conv2d,
    expand: Conv2d,
}

impl SqueezeExcite {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = global_avg_pool(x)?;
        let s = self.reduce.forward(&s)?.silu()?;
        let s = candle_nn::ops::sigmoid(&self.expand.forward(&s)?)?;
        Ok(x.broadcast_mul(&s)?)
    }
}

struct MbConv {
    expand: Option<ConvBn>,
    depthwise: DepthwiseConv2d,
    dw_bn: BatchNorm,
    se: SqueezeExcite,
    project: ConvBn,
    residual: bool,
}

impl MbConv {
    fn new(
        b: &mut ParamBuilder,
        name: &str,
        (kernel, stride, expand_ratio): (usize, usize, usize),
        in_c: usize,
        out_c: usize,
    ) -> Result<Self> {
        let mid = in_c * expand_ratio;
        let expand = if expand_ratio != 1 {
            Some(ConvBn::new(b, &format!("{name}.expand"), in_c, mid, (1, 1), 1, Padding::Valid, Activation::Silu)?)
        } else {
            None
        };
        let se_c = (in_c / 4).max(1);
        Ok(Self {
            expand,
            depthwise: DepthwiseConv2d::new(b, &format!("{name}.dwconv"), mid, kernel, stride)?,
            dw_bn: BatchNorm::new(b, &format!("{name}.dwconv.bn"), mid, 1e-3)?,
            se: SqueezeExcite {
                reduce: Conv2d::new(b, &format!("{name}.se.reduce"), mid, se_c, (1, 1), 1, Padding::Valid, true)?,
                expand: Conv2d::new(b, &format!("{name}.se.expand"), se_c, mid, (1, 1), 1, Padding::Valid, true)?,
            },
            project: ConvBn::new(b, &format!("{name}.project"), mid, out_c, (1, 1), 1, Padding::Valid, Activation::Identity)?,
            residual: stride == 1 && in_c == out_c,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = match &self.expand {
            Some(e) => e.forward(x)?,
            None => x.clone(),
        };
        y = self.dw_bn.forward(&self.depthwise.forward(&y)?)?.silu()?;
        y = self.se.forward(&y)?;
        y = self.project.forward(&y)?;
        Ok(if self.residual { (y + x)? } else { y })
    }
}

pub struct EfficientNet {
    stem: ConvBn,
    blocks: Vec<MbConv>,
    top: ConvBn,
}

impl EfficientNet {
    pub fn new(b: &mut ParamBuilder, scaling: Scaling) -> Result<Self> {
        let stem_c = round_filters(32, scaling.width);
        let stem = ConvBn::new(b, "stem", 3, stem_c, (3, 3), 2, Padding::Same, Activation::Silu)?;
        let mut blocks = Vec::new();
        let mut last = stem_c;
        for (stage, &(k, s, e, in_f, out_f, r)) in BASE_BLOCKS.iter().enumerate() {
            let in_c = round_filters(in_f, scaling.width);
            let out_c = round_filters(out_f, scaling.width);
            for i in 0..round_repeats(r, scaling.depth) {
                let (stride, input) = if i == 0 { (s, in_c) } else { (1, out_c) };
                blocks.push(MbConv::new(b, &format!("block{}.{i}", stage + 1), (k, stride, e), input, out_c)?);
            }
            last = out_c;
        }
        let top_c = round_filters(1280, scaling.width);
        let top = ConvBn::new(b, "top", last, top_c, (1, 1), 1, Padding::Valid, Activation::Silu)?;
        Ok(Self { stem, blocks, top })
    }
}

impl FeatureExtractor for EfficientNet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = self.stem.forward(x)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        self.top.forward(&x)
    }
}
