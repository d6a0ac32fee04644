//! Layer primitives shared by the backbones and the classification head.
//! All tensors are NCHW.

use candle_core::{Module, Tensor, D};

use super::params::{Init, ParamBuilder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(in / stride)`: pads `(k-1)/2` before and `k/2` after,
    /// plus whatever stride alignment needs.
    Same,
    Valid,
}

fn pad_same(x: &Tensor, kh: usize, kw: usize, stride: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let total = |n: usize, k: usize| {
        let out = n.div_ceil(stride);
        ((out - 1) * stride + k).saturating_sub(n)
    };
    let (th, tw) = (total(h, kh), total(w, kw));
    let mut x = x.clone();
    if th > 0 {
        x = x.pad_with_zeros(2, th / 2, th - th / 2)?;
    }
    if tw > 0 {
        x = x.pad_with_zeros(3, tw / 2, tw - tw / 2)?;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: Padding,
    kernel: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let weight = b.var(
            &format!("{name}.weight"),
            &[out_c, in_c, kh, kw],
            Init::GlorotUniform { fan_in: in_c * kh * kw, fan_out: out_c * kh * kw },
        )?;
        let bias = if bias {
            Some(b.var(&format!("{name}.bias"), &[out_c], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias, stride, padding, kernel })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = match self.padding {
            Padding::Same => pad_same(x, self.kernel.0, self.kernel.1, self.stride)?,
            Padding::Valid => x.clone(),
        };
        check_window(&x, self.kernel.0, self.kernel.1)?;
        let y = x.conv2d(&self.weight, 0, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }
}

/// Depthwise convolution as a sum of shifted, per-channel scaled copies.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    weight: Tensor,
    kernel: usize,
    stride: usize,
}

impl DepthwiseConv2d {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        let weight = b.var(
            &format!("{name}.weight"),
            &[channels, 1, kernel, kernel],
            Init::GlorotUniform { fan_in: kernel * kernel, fan_out: kernel * kernel },
        )?;
        Ok(Self { weight, kernel, stride })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let k = self.kernel;
        let (oh, ow) = (h.div_ceil(self.stride), w.div_ceil(self.stride));
        let xp = pad_same(x, k, k, self.stride)?;
        let mut acc: Option<Tensor> = None;
        for ky in 0..k {
            for kx in 0..k {
                let span_h = (oh - 1) * self.stride + 1;
                let span_w = (ow - 1) * self.stride + 1;
                let mut patch = xp.narrow(2, ky, span_h)?.narrow(3, kx, span_w)?;
                if self.stride > 1 {
                    patch = subsample(&patch, self.stride)?;
                }
                let wk = self.weight.narrow(2, ky, 1)?.narrow(3, kx, 1)?.reshape((1, c, 1, 1))?;
                let term = patch.broadcast_mul(&wk)?;
                acc = Some(match acc {
                    Some(a) => (a + term)?,
                    None => term,
                });
            }
        }
        Ok(acc.expect("kernel is non-empty"))
    }
}

/// Keeps every `stride`-th row and column starting at index 0.
fn subsample(x: &Tensor, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let x = x
        .pad_with_zeros(2, 0, oh * stride - h)?
        .pad_with_zeros(3, 0, ow * stride - w)?;
    Ok(x
        .reshape((n, c, oh, stride, ow, stride))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((n, c, oh, ow))?)
}

/// Inference-mode batch normalisation with stored running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    scale: Tensor,
    shift: Tensor,
    mean: Tensor,
    var: Tensor,
    eps: f64,
}

impl BatchNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            scale: b.var(&format!("{name}.gamma"), &[channels], Init::Ones)?,
            shift: b.var(&format!("{name}.beta"), &[channels], Init::Zeros)?,
            mean: b.buffer(&format!("{name}.running_mean"), &[channels], Init::Zeros)?,
            var: b.buffer(&format!("{name}.running_var"), &[channels], Init::Ones)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = (1, (), 1, 1);
        let inv_std = (self.var.affine(1.0, self.eps)?.sqrt()?.recip()? * &self.scale)?;
        let offset = (&self.shift - (&self.mean * &inv_std)?)?;
        Ok(x
            .broadcast_mul(&inv_std.reshape(shape)?)?
            .broadcast_add(&offset.reshape(shape)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Relu => x.relu()?,
            Activation::Silu => x.silu()?,
            Activation::Identity => x.clone(),
        })
    }
}

/// Convolution without bias, batch norm, then activation.
#[derive(Debug, Clone)]
pub struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
    act: Activation,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        act: Activation,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(b, &format!("{name}.conv"), in_c, out_c, kernel, stride, padding, false)?,
            bn: BatchNorm::new(b, &format!("{name}.bn"), out_c, 1e-3)?,
            act,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.act.apply(&self.bn.forward(&self.conv.forward(x)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder, name: &str, in_f: usize, out_f: usize) -> Result<Self> {
        Ok(Self {
            weight: b.var(
                &format!("{name}.weight"),
                &[out_f, in_f],
                Init::GlorotUniform { fan_in: in_f, fan_out: out_f },
            )?,
            bias: b.var(&format!("{name}.bias"), &[out_f], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::Linear::new(self.weight.clone(), Some(self.bias.clone())).forward(x)?)
    }
}

/// Candle panics on windows larger than the input; report a shape error instead.
fn check_window(x: &Tensor, kh: usize, kw: usize) -> Result<()> {
    let (_, _, h, w) = x.dims4()?;
    if h < kh || w < kw {
        return Err(Error::Shape(format!("{h}x{w} feature map is smaller than the {kh}x{kw} window")));
    }
    Ok(())
}

/// Valid max pooling. Candle's own `max_pool2d` scales its gradient by
/// (ties / window area), so pooling is written as reshapes plus a max
/// reduction, whose backward routes the full gradient to the maximum.
pub fn max_pool(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    check_window(x, kernel, kernel)?;
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    if kernel == stride {
        let k = kernel;
        let x = x.narrow(2, 0, oh * k)?.narrow(3, 0, ow * k)?;
        return Ok(x.reshape((n, c, oh, k, ow, k))?.max(5)?.max(3)?);
    }
    let mut views = Vec::with_capacity(kernel * kernel);
    for ky in 0..kernel {
        for kx in 0..kernel {
            let v = x.narrow(2, ky, (oh - 1) * stride + 1)?.narrow(3, kx, (ow - 1) * stride + 1)?;
            views.push(if stride > 1 { subsample(&v, stride)? } else { v });
        }
    }
    Ok(Tensor::stack(&views, 4)?.max(4)?)
}

/// 3×3 max pool, stride 2, one pixel of zero padding. Only valid on
/// non-negative inputs (after ReLU), where zero padding cannot win the max.
pub fn max_pool_3x3_s2_padded(x: &Tensor) -> Result<Tensor> {
    let x = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    max_pool(&x, 3, 2)
}

/// 3×3 average pool, stride 1, same padding, padded cells excluded from the mean.
pub fn avg_pool_3x3_same(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let summed = (padded.avg_pool2d_with_stride(3, 1)? * 9.0)?;
    let ones = Tensor::ones((1, 1, h, w), x.dtype(), x.device())?
        .pad_with_zeros(2, 1, 1)?
        .pad_with_zeros(3, 1, 1)?;
    let counts = (ones.avg_pool2d_with_stride(3, 1)? * 9.0)?;
    Ok(summed.broadcast_div(&counts)?)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?)
}
