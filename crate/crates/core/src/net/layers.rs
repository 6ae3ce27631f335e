//! Differentiable building blocks on top of candle tensors.

use candle_core::{Tensor, Var, D};

use crate::error::Result;
use crate::net::params::ParamBuilder;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Bias-free convolution with fan-out He init (for conv → batch-norm pairs).
    pub fn no_bias(pb: &ParamBuilder, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.kaiming_fan_out("weight", &[c_out, c_in, k, k])?,
            bias: None,
            stride,
            padding,
        })
    }

    /// Convolution with bias, uniform fan-in init.
    pub fn with_bias(pb: &ParamBuilder, c_in: usize, c_out: usize, k: usize, padding: usize) -> Result<Self> {
        let fan_in = c_in * k * k;
        Ok(Self {
            weight: pb.uniform_fan_in("weight", &[c_out, c_in, k, k], fan_in, true)?,
            bias: Some(pb.uniform_fan_in("bias", &[c_out], fan_in, false)?),
            stride: 1,
            padding,
        })
    }

    /// Lowered to one matmul over im2col columns with the batch folded into
    /// the column axis; its backward pass is far cheaper than the native
    /// convolution's.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c_out, c_in, kh, kw) = self.weight.dims4()?;
        let (n, _, h, w) = x.dims4()?;
        let p = self.padding;
        let (oh, ow) = ((h + 2 * p - kh) / self.stride + 1, (w + 2 * p - kw) / self.stride + 1);
        // Channels first, so columns come out as (c_in·kh·kw, n·oh·ow).
        let x = x.transpose(0, 1)?;
        let cols = if (kh, kw, p) == (1, 1, 0) {
            let x = if self.stride > 1 { subsample(&x, self.stride)? } else { x };
            x.contiguous()?.reshape((c_in, n * oh * ow))?
        } else {
            let x = x.pad_with_zeros(2, p, p)?.pad_with_zeros(3, p, p)?;
            let mut taps = Vec::with_capacity(kh * kw);
            for i in 0..kh {
                for j in 0..kw {
                    let win = x
                        .narrow(2, i, (oh - 1) * self.stride + 1)?
                        .narrow(3, j, (ow - 1) * self.stride + 1)?;
                    taps.push(if self.stride > 1 { subsample(&win, self.stride)? } else { win });
                }
            }
            Tensor::stack(&taps, 1)?.reshape((c_in * kh * kw, n * oh * ow))?
        };
        let wm = self.weight.reshape((c_out, c_in * kh * kw))?;
        let y = wm.matmul(&cols)?.reshape((c_out, n, oh, ow))?.transpose(0, 1)?.contiguous()?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Nearest-neighbour 2× upsampling of `(N, C, H, W)`.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((n, c, 2 * h, 2 * w))?)
}

/// Keeps every `stride`-th element of the last two axes, starting at 0.
fn subsample(x: &Tensor, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let x = x.pad_with_zeros(2, 0, ho * stride - h)?.pad_with_zeros(3, 0, wo * stride - w)?;
    Ok(x.reshape((n, c, ho, stride, wo, stride))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((n, c, ho, wo))?)
}

/// Weight of the newest batch in the running statistics.
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Batch normalization over `(N, H, W)` per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Self::with_scale(pb, channels, 1.0)
    }

    /// Starts the affine scale at `gamma` instead of 1.
    pub fn with_scale(pb: &ParamBuilder, channels: usize, gamma: f64) -> Result<Self> {
        Ok(Self {
            weight: pb.constant("weight", &[channels], gamma, false)?,
            bias: pb.constant("bias", &[channels], 0.0, false)?,
            running_mean: pb.buffer("running_mean", &[channels], 0.0)?,
            running_var: pb.buffer("running_var", &[channels], 1.0)?,
            eps: 1e-5,
            momentum: BATCH_NORM_MOMENTUM,
        })
    }

    /// In training mode normalizes with batch statistics and updates the
    /// running estimates; otherwise uses the running estimates. The running
    /// variance tracks the population variance actually used for
    /// normalization, without the n/(n-1) correction, so recalibrated
    /// statistics reproduce training-mode outputs exactly.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
            let new_var =
                ((self.running_var.as_tensor() * (1.0 - m))? + (var.detach().flatten_all()? * m)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Fully connected layer applied to the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    /// `(out, in)`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(pb: &ParamBuilder, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.trunc_normal("weight", &[d_out, d_in], 0.02)?,
            bias: pb.constant("bias", &[d_out], 0.0, false)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / d_in;
        let y = x.reshape((rows, d_in))?.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.constant("weight", &[dim], 1.0, false)?,
            bias: pb.constant("bias", &[dim], 0.0, false)?,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Numerically stable softmax along `dim`.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

/// Logistic function written through `tanh`, which stays finite for large
/// magnitudes in both directions.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// 3×3, stride-2, padding-1 max pooling of a nonnegative `(N, C, H, W)`
/// tensor with even `H` and `W`. Zero padding is exact because inputs are
/// nonnegative.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        let rows = padded
            .narrow(2, dy, 2 * ho)?
            .reshape((n, c, ho, 2, w + 2))?
            .narrow(3, 0, 1)?
            .squeeze(3)?;
        for dx in 0..3 {
            let tap = rows
                .narrow(3, dx, 2 * wo)?
                .reshape((n, c, ho, wo, 2))?
                .narrow(4, 0, 1)?
                .squeeze(4)?;
            out = Some(match out {
                None => tap,
                Some(acc) => acc.maximum(&tap)?,
            });
        }
    }
    Ok(out.expect("nine taps"))
}
