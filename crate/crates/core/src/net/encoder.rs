//! Residual CNN encoder (bottleneck ResNet-50 layout) emitting a three-scale
//! feature pyramid. Parameter names follow the torchvision convention so
//! classification-pretrained backbone weights can be loaded by name.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::net::layers::{max_pool_3x3_s2, BatchNorm2d, Conv2d};
use crate::net::params::ParamBuilder;

/// Output channels of the three tapped stages (/8, /16, /32).
pub const PYRAMID_CHANNELS: [usize; 3] = [512, 1024, 2048];

/// Blocks per stage for ResNet-50.
pub const RESNET50_BLOCKS: [usize; 4] = [3, 4, 6, 3];

/// Encoder outputs at strides 8, 16 and 32, each `(N, C, H/s, W/s)`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub f8: Tensor,
    pub f16: Tensor,
    pub f32: Tensor,
}

impl FeaturePyramid {
    /// Coarsest first, the order the transformer branches and decoder use.
    pub fn coarse_to_fine(&self) -> [&Tensor; 3] {
        [&self.f32, &self.f16, &self.f8]
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new(pb: &ParamBuilder, c_in: usize, width: usize, stride: usize, zero_init_residual: bool) -> Result<Self> {
        let c_out = width * 4;
        let downsample = if stride != 1 || c_in != c_out {
            let ds = pb.pp("downsample");
            Some((
                Conv2d::no_bias(&ds.pp("0"), c_in, c_out, 1, stride, 0)?,
                BatchNorm2d::new(&ds.pp("1"), c_out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::no_bias(&pb.pp("conv1"), c_in, width, 1, 1, 0)?,
            bn1: BatchNorm2d::new(&pb.pp("bn1"), width)?,
            conv2: Conv2d::no_bias(&pb.pp("conv2"), width, width, 3, stride, 1)?,
            bn2: BatchNorm2d::new(&pb.pp("bn2"), width)?,
            conv3: Conv2d::no_bias(&pb.pp("conv3"), width, c_out, 1, 1, 0)?,
            bn3: BatchNorm2d::with_scale(&pb.pp("bn3"), c_out, if zero_init_residual { 0.0 } else { 1.0 })?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?.relu()?;
        let y = self.bn3.forward(&self.conv3.forward(&y)?, train)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + shortcut)?.relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct ResNetEncoder {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    stages: [Vec<Bottleneck>; 4],
}

impl ResNetEncoder {
    /// With `zero_init_residual` every bottleneck starts as the identity
    /// (its last batch-norm scale is 0).
    pub fn new(pb: &ParamBuilder, blocks: [usize; 4], zero_init_residual: bool) -> Result<Self> {
        if blocks.iter().any(|&b| b == 0) {
            return Err(Error::invalid("every encoder stage needs at least one block"));
        }
        let conv1 = Conv2d::no_bias(&pb.pp("conv1"), 3, 64, 7, 2, 3)?;
        let bn1 = BatchNorm2d::new(&pb.pp("bn1"), 64)?;
        let mut c_in = 64;
        let mut stages: [Vec<Bottleneck>; 4] = Default::default();
        for (i, stage) in stages.iter_mut().enumerate() {
            let width = 64 << i;
            let stride = if i == 0 { 1 } else { 2 };
            let lp = pb.pp(format!("layer{}", i + 1));
            for b in 0..blocks[i] {
                let s = if b == 0 { stride } else { 1 };
                stage.push(Bottleneck::new(&lp.pp(b.to_string()), c_in, width, s, zero_init_residual)?);
                c_in = width * 4;
            }
        }
        Ok(Self { conv1, bn1, stages })
    }

    /// `x` is `(N, 3, H, W)` with `H` and `W` divisible by 32.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("encoder expects 3 input channels, got {c}")));
        }
        crate::datamodel::io::check_working_size(h, w)?;
        let mut y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        y = max_pool_3x3_s2(&y)?;
        let mut taps = Vec::with_capacity(3);
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                y = block.forward(&y, train)?;
            }
            if i > 0 {
                taps.push(y.clone());
            }
        }
        let [f8, f16, f32]: [Tensor; 3] = taps.try_into().expect("three tapped stages");
        Ok(FeaturePyramid { f8, f16, f32 })
    }
}
