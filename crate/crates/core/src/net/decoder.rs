//! Learnable-weight feature fusion and the upsampling decoder.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::net::layers::{sigmoid, upsample2x, BatchNorm2d, Conv2d};
use crate::net::params::ParamBuilder;

/// Blends image and text-map features: `σ(α)·image + (1 − σ(α))·text`.
pub fn fuse(image: &Tensor, text: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    if image.dims() != text.dims() {
        return Err(Error::Shape(format!(
            "cannot fuse {:?} with {:?}",
            image.dims(),
            text.dims()
        )));
    }
    let w = sigmoid(alpha)?;
    let one_minus = w.affine(-1.0, 1.0)?;
    Ok((image.broadcast_mul(&w)? + text.broadcast_mul(&one_minus)?)?)
}

pub fn sigmoid_scalar(alpha: f64) -> f64 {
    1.0 / (1.0 + (-alpha).exp())
}

/// Conv3×3 → batch norm → ReLU.
#[derive(Debug, Clone)]
struct Stage {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl Stage {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, train)?.relu()?)
    }
}

/// Six conv stages with five nearest-neighbour 2× upsamplings. Stages 2 and 3
/// multiply the upsampled map with the fused skip features.
#[derive(Debug, Clone)]
pub struct Decoder {
    stages: Vec<Stage>,
    head: Conv2d,
}

impl Decoder {
    /// `in_channels` is the channel count of the coarsest fused map and
    /// `channels[i]` the output width of stage `i + 1`.
    pub fn new(pb: &ParamBuilder, in_channels: usize, channels: &[usize]) -> Result<Self> {
        if channels.len() != 6 {
            return Err(Error::invalid(format!("decoder needs 6 stage widths, got {}", channels.len())));
        }
        let mut c_in = in_channels;
        let mut stages = Vec::with_capacity(6);
        for (i, &c_out) in channels.iter().enumerate() {
            let sp = pb.pp(format!("stages.{i}"));
            stages.push(Stage {
                conv: Conv2d::no_bias(&sp.pp("conv"), c_in, c_out, 3, 1, 1)?,
                bn: BatchNorm2d::new(&sp.pp("bn"), c_out)?,
            });
            c_in = c_out;
        }
        let head = Conv2d::with_bias(&pb.pp("head"), c_in, 1, 3, 1)?;
        Ok(Self { stages, head })
    }

    /// `fused` is coarsest first: strides 32, 16, 8. Returns `(N, 1, H, W)` in `[0, 1]`.
    pub fn forward(&self, fused: [&Tensor; 3], train: bool) -> Result<Tensor> {
        self.forward_traced(fused, train, &mut |_, _| {})
    }

    pub(crate) fn forward_traced(
        &self,
        fused: [&Tensor; 3],
        train: bool,
        trace: &mut dyn FnMut(String, &Tensor),
    ) -> Result<Tensor> {
        let mut o = fused[0].clone();
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                o = upsample2x(&o)?;
                if let Some(skip) = fused.get(i) {
                    if skip.dims() != o.dims() {
                        return Err(Error::Shape(format!(
                            "decoder stage {} upsampled map {:?} does not match skip {:?}",
                            i + 1,
                            o.dims(),
                            skip.dims()
                        )));
                    }
                    o = (o * *skip)?.relu()?;
                }
            }
            trace(format!("decoder.O{}", i + 1), &o);
            o = stage.forward(&o, train)?;
            trace(format!("decoder.O{}*", i + 1), &o);
        }
        let s = sigmoid(&self.head.forward(&o)?)?;
        trace("saliency".into(), &s);
        Ok(s)
    }
}
