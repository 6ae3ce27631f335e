//! The text-aware saliency network.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::datamodel::io::check_working_size as check_size;
use crate::datamodel::{Grid, ImageTensor};
use crate::error::{Error, Result};
use crate::net::decoder::{fuse, sigmoid_scalar, Decoder};
use crate::net::encoder::{FeaturePyramid, ResNetEncoder, PYRAMID_CHANNELS, RESNET50_BLOCKS};
use crate::net::params::{ParamBuilder, ParamStore};
use crate::net::transformer::{tokens_to_grid, TokenEmbedding, TransformerEncoder};

/// Token widths of the transformer branches, coarsest (stride 32) first.
pub const TOKEN_DIMS: [usize; 3] = [768, 768, 512];

/// Encoder strides matching [`TOKEN_DIMS`].
pub const BRANCH_STRIDES: [usize; 3] = [32, 16, 8];

/// Architecture hyperparameters. Serialized as the model config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Working resolution `[height, width]`, both multiples of 32.
    pub resolution: [usize; 2],
    /// One encoder for both image and text map.
    pub share_encoders: bool,
    /// One fusion weight for all three scales.
    pub tie_alpha: bool,
    /// Hidden width of the transformer MLP as a multiple of the token width.
    pub mlp_ratio: usize,
    /// Output widths of the six decoder stages.
    pub decoder_channels: Vec<usize>,
    /// Bottleneck blocks per encoder stage.
    pub encoder_blocks: [usize; 4],
    /// Encoder layers per transformer branch.
    pub transformer_depth: usize,
    /// Initial raw fusion parameter (before the sigmoid).
    pub alpha_init: f64,
    /// Start each encoder bottleneck as the identity. Helps a randomly
    /// initialized backbone train from scratch.
    pub zero_init_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: [288, 384],
            share_encoders: false,
            tie_alpha: false,
            mlp_ratio: 4,
            decoder_channels: vec![768, 512, 256, 128, 64, 64],
            encoder_blocks: RESNET50_BLOCKS,
            transformer_depth: 2,
            alpha_init: 0.5,
            zero_init_residual: false,
        }
    }
}

impl ModelConfig {
    /// Configuration sized to the published ~66M parameter budget: a single
    /// shared backbone and an MLP as wide as the tokens.
    pub fn reference() -> Self {
        Self {
            share_encoders: true,
            mlp_ratio: 1,
            ..Self::default()
        }
    }

    pub fn with_resolution(mut self, height: usize, width: usize) -> Self {
        self.resolution = [height, width];
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.resolution[0], self.resolution[1])?;
        if self.decoder_channels.len() != 6 || self.decoder_channels.contains(&0) {
            return Err(Error::invalid("decoder_channels must list six nonzero widths"));
        }
        if self.decoder_channels[0] != TOKEN_DIMS[1] || self.decoder_channels[1] != TOKEN_DIMS[2] {
            return Err(Error::invalid(format!(
                "decoder stages 1 and 2 must emit {} and {} channels to multiply with the skip features",
                TOKEN_DIMS[1], TOKEN_DIMS[2]
            )));
        }
        if self.mlp_ratio == 0 || self.transformer_depth == 0 || self.encoder_blocks.contains(&0) {
            return Err(Error::invalid("mlp_ratio, transformer_depth and encoder_blocks must be positive"));
        }
        if !self.alpha_init.is_finite() {
            return Err(Error::invalid("alpha_init must be finite"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Malformed {
            what: "model config",
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self, branch: usize) -> (usize, usize) {
        let s = BRANCH_STRIDES[branch];
        (self.resolution[0] / s, self.resolution[1] / s)
    }
}

/// Projection, positional embedding and transformer for one scale of one stream.
#[derive(Debug, Clone)]
struct Branch {
    embed: TokenEmbedding,
    encoder: TransformerEncoder,
    grid: (usize, usize),
}

impl Branch {
    fn new(pb: &ParamBuilder, cfg: &ModelConfig, j: usize) -> Result<Self> {
        let grid = cfg.grid(j);
        let c_in = PYRAMID_CHANNELS[2 - j];
        Ok(Self {
            embed: TokenEmbedding::new(&pb.pp("embed"), c_in, TOKEN_DIMS[j], grid)?,
            encoder: TransformerEncoder::new(&pb.pp("transformer"), TOKEN_DIMS[j], cfg.transformer_depth, cfg.mlp_ratio)?,
            grid,
        })
    }

    fn forward(&self, feature: &Tensor, trace: &mut dyn FnMut(String, &Tensor), name: &str) -> Result<Tensor> {
        let z0 = self.embed.forward(feature)?;
        trace(format!("{name}.tokens"), &z0);
        let z = self.encoder.forward(&z0)?;
        trace(format!("{name}.encoded"), &z);
        tokens_to_grid(&z, self.grid)
    }
}

/// Twin CNN encoders → per-scale transformers → learnable fusion → decoder.
pub struct SaliencyModel {
    config: ModelConfig,
    seed: u64,
    dtype: DType,
    device: Device,
    store: ParamStore,
    image_encoder: ResNetEncoder,
    text_encoder: Option<ResNetEncoder>,
    image_branches: Vec<Branch>,
    text_branches: Vec<Branch>,
    alphas: Vec<Tensor>,
    decoder: Decoder,
}

impl std::fmt::Debug for SaliencyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaliencyModel")
            .field("config", &self.config)
            .field("seed", &self.seed)
            .field("dtype", &self.dtype)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl SaliencyModel {
    /// Builds a randomly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        Self::build(config, ParamBuilder::new(seed, dtype, Device::Cpu), seed)
    }

    /// Builds a model with every tensor zeroed, to be filled from a checkpoint.
    pub(crate) fn new_unfilled(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        Self::build(config, ParamBuilder::new_zeroed(dtype, Device::Cpu), seed)
    }

    fn build(config: ModelConfig, pb: ParamBuilder, seed: u64) -> Result<Self> {
        config.validate()?;
        let image_encoder = ResNetEncoder::new(&pb.pp("image_encoder"), config.encoder_blocks, config.zero_init_residual)?;
        let text_encoder = if config.share_encoders {
            None
        } else {
            Some(ResNetEncoder::new(&pb.pp("text_encoder"), config.encoder_blocks, config.zero_init_residual)?)
        };
        let image_branches = (0..3)
            .map(|j| Branch::new(&pb.pp(format!("image_branches.{j}")), &config, j))
            .collect::<Result<Vec<_>>>()?;
        let text_branches = (0..3)
            .map(|j| Branch::new(&pb.pp(format!("text_branches.{j}")), &config, j))
            .collect::<Result<Vec<_>>>()?;
        let fusion = pb.pp("fusion");
        let alphas = if config.tie_alpha {
            vec![fusion.constant("alpha", &[1], config.alpha_init, false)?]
        } else {
            (0..3)
                .map(|j| fusion.constant(&format!("alpha.{j}"), &[1], config.alpha_init, false))
                .collect::<Result<Vec<_>>>()?
        };
        let decoder = Decoder::new(&pb.pp("decoder"), TOKEN_DIMS[0], &config.decoder_channels)?;
        let dtype = pb.dtype();
        let device = pb.device();
        Ok(Self {
            config,
            seed,
            dtype,
            device,
            store: pb.into_store(),
            image_encoder,
            text_encoder,
            image_branches,
            text_branches,
            alphas,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Current batch-norm running statistics, in store order.
    pub fn snapshot_buffers(&self) -> Result<Vec<Tensor>> {
        self.store
            .buffers
            .values()
            .map(|v| Ok(v.as_tensor().copy()?))
            .collect()
    }

    pub fn restore_buffers(&self, saved: &[Tensor]) -> Result<()> {
        if saved.len() != self.store.buffers.len() {
            return Err(Error::Model("buffer snapshot does not match the model".into()));
        }
        for (v, t) in self.store.buffers.values().zip(saved) {
            v.set(t)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    pub fn working_size(&self) -> (usize, usize) {
        (self.config.resolution[0], self.config.resolution[1])
    }

    /// Raw fusion parameters, one per scale (or one when tied).
    pub fn alpha_values(&self) -> Result<Vec<f64>> {
        self.alphas
            .iter()
            .map(|a| Ok(a.to_dtype(DType::F64)?.to_vec1::<f64>()?[0]))
            .collect()
    }

    /// `σ(α)` per scale: the image-stream share of each fused map.
    pub fn fusion_weights(&self) -> Result<Vec<f64>> {
        Ok(self.alpha_values()?.into_iter().map(sigmoid_scalar).collect())
    }

    fn alpha_for(&self, j: usize) -> &Tensor {
        &self.alphas[if self.config.tie_alpha { 0 } else { j }]
    }

    pub fn encode_image(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        self.image_encoder.forward(x, train)
    }

    pub fn encode_text(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        self.text_encoder.as_ref().unwrap_or(&self.image_encoder).forward(x, train)
    }

    /// Full network on `(N, 3, H, W)` image and text-map batches; returns `(N, 1, H, W)`.
    pub fn forward(&self, image: &Tensor, text: &Tensor, train: bool) -> Result<Tensor> {
        self.forward_traced(image, text, train, &mut |_, _| {})
    }

    /// Like [`forward`](Self::forward), reporting every named intermediate to `trace`.
    pub fn forward_traced(
        &self,
        image: &Tensor,
        text: &Tensor,
        train: bool,
        trace: &mut dyn FnMut(String, &Tensor),
    ) -> Result<Tensor> {
        let (_, _, h, w) = image.dims4()?;
        if (h, w) != self.working_size() || image.dims() != text.dims() {
            return Err(Error::Shape(format!(
                "inputs {:?} / {:?} do not match working size {:?}",
                image.dims(),
                text.dims(),
                self.working_size()
            )));
        }
        let ip = self.encode_image(image, train)?;
        let tp = self.encode_text(text, train)?;
        for (stream, p) in [("image", &ip), ("text", &tp)] {
            trace(format!("{stream}.f8"), &p.f8);
            trace(format!("{stream}.f16"), &p.f16);
            trace(format!("{stream}.f32"), &p.f32);
        }
        let mut fused = Vec::with_capacity(3);
        for j in 0..3 {
            let i_star = self.image_branches[j].forward(ip.coarse_to_fine()[j], trace, &format!("image.branch{}", j + 1))?;
            let t_star = self.text_branches[j].forward(tp.coarse_to_fine()[j], trace, &format!("text.branch{}", j + 1))?;
            let f = fuse(&i_star, &t_star, self.alpha_for(j))?;
            trace(format!("fused{}", j + 1), &f);
            fused.push(f);
        }
        self.decoder.forward_traced([&fused[0], &fused[1], &fused[2]], train, trace)
    }

    /// Stacks images into a `(N, 3, H, W)` tensor of the model's dtype.
    pub fn batch_tensor(&self, images: &[&ImageTensor]) -> Result<Tensor> {
        let (h, w) = self.working_size();
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "image {}x{} does not match working size {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            data.extend(img.to_planar());
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &self.device)?.to_dtype(self.dtype)?)
    }

    /// Inference at working resolution on one image/text-map pair.
    pub fn predict_grid(&self, image: &ImageTensor, text: &ImageTensor) -> Result<Grid> {
        let x = self.batch_tensor(&[image])?;
        let t = self.batch_tensor(&[text])?;
        let s = self.forward(&x, &t, false)?;
        let (h, w) = self.working_size();
        let data = s.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Grid::new(h, w, data)
    }
}
