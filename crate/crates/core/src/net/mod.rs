//! The saliency network: encoders, transformer branches, fusion and decoder.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod model;
pub mod params;
pub mod transformer;

pub use candle_core::DType;
pub use checkpoint::{read_header, CheckpointHeader, FORMAT_VERSION};
pub use decoder::{fuse, Decoder};
pub use encoder::{FeaturePyramid, ResNetEncoder, PYRAMID_CHANNELS, RESNET50_BLOCKS};
pub use model::{ModelConfig, SaliencyModel, BRANCH_STRIDES, TOKEN_DIMS};
pub use params::{Param, ParamBuilder, ParamStore};
pub use transformer::{efficient_attention, TransformerEncoder};
