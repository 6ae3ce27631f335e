//! Token embedding, efficient attention and the pre-norm transformer encoder.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::net::layers::{softmax, Conv2d, LayerNorm, Linear};
use crate::net::params::ParamBuilder;

/// Linear-complexity attention `softmax_row(Q) · (softmax_col(K)ᵀ · V)`.
///
/// `q`, `k` are `(B, n, d_k)` and `v` is `(B, n, d_v)`. Queries are
/// normalized over the feature axis, keys over the token axis. The only
/// intermediate besides the normalized inputs is the `(B, d_k, d_v)` context.
pub fn efficient_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (b, n, dk) = q.dims3()?;
    let (kb, kn, kdk) = k.dims3()?;
    let (vb, vn, _) = v.dims3()?;
    if (kb, kn, kdk) != (b, n, dk) || (vb, vn) != (b, n) {
        return Err(Error::Shape(format!(
            "attention operands disagree: q {:?}, k {:?}, v {:?}",
            q.dims(),
            k.dims(),
            v.dims()
        )));
    }
    for (name, t) in [("query", q), ("key", k), ("value", v)] {
        let total = t.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if total.is_nan() {
            return Err(Error::invalid(format!("NaN in attention {name}")));
        }
    }
    let q = softmax(q, 2)?;
    let k = softmax(k, 1)?;
    let context = k.transpose(1, 2)?.contiguous()?.matmul(&v.contiguous()?)?;
    Ok(q.matmul(&context)?)
}

/// Single-head efficient attention with query/key width `d/2` and an output
/// projection.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
}

impl AttentionBlock {
    pub fn new(pb: &ParamBuilder, dim: usize) -> Result<Self> {
        let dk = dim / 2;
        Ok(Self {
            query: Linear::new(&pb.pp("query"), dim, dk)?,
            key: Linear::new(&pb.pp("key"), dim, dk)?,
            value: Linear::new(&pb.pp("value"), dim, dim)?,
            out: Linear::new(&pb.pp("out"), dim, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = efficient_attention(&self.query.forward(x)?, &self.key.forward(x)?, &self.value.forward(x)?)?;
        self.out.forward(&a)
    }
}

/// `z' = z + Attn(LN(z))`, then `z = z' + MLP(LN(z'))` with a GELU MLP.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: AttentionBlock,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderLayer {
    pub fn new(pb: &ParamBuilder, dim: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&pb.pp("norm1"), dim)?,
            attn: AttentionBlock::new(&pb.pp("attn"), dim)?,
            norm2: LayerNorm::new(&pb.pp("norm2"), dim)?,
            fc1: Linear::new(&pb.pp("mlp.fc1"), dim, dim * mlp_ratio)?,
            fc2: Linear::new(&pb.pp("mlp.fc2"), dim * mlp_ratio, dim)?,
        })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let z = (z + self.attn.forward(&self.norm1.forward(z)?)?)?;
        let h = self.fc1.forward(&self.norm2.forward(&z)?)?.gelu_erf()?;
        Ok((&z + self.fc2.forward(&h)?)?)
    }
}

/// 1×1 projection to the token width plus a learned positional embedding.
#[derive(Debug, Clone)]
pub struct TokenEmbedding {
    pub proj: Conv2d,
    /// `(1, n, d)`.
    pub position: Tensor,
    grid: (usize, usize),
}

impl TokenEmbedding {
    pub fn new(pb: &ParamBuilder, c_in: usize, dim: usize, grid: (usize, usize)) -> Result<Self> {
        Ok(Self {
            proj: Conv2d::with_bias(&pb.pp("proj"), c_in, dim, 1, 0)?,
            position: pb.trunc_normal("position", &[1, grid.0 * grid.1, dim], 0.02)?,
            grid,
        })
    }

    /// `(N, C, h, w)` feature map → `(N, h·w, d)` tokens.
    pub fn forward(&self, feature: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = feature.dims4()?;
        if (h, w) != self.grid {
            return Err(Error::Shape(format!(
                "feature grid {h}x{w} does not match embedding grid {}x{}",
                self.grid.0, self.grid.1
            )));
        }
        let y = self.proj.forward(feature)?;
        let d = y.dim(1)?;
        let tokens = y.reshape((n, d, h * w))?.transpose(1, 2)?.contiguous()?;
        Ok(tokens.broadcast_add(&self.position)?)
    }
}

/// Stack of [`EncoderLayer`]s.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn new(pb: &ParamBuilder, dim: usize, depth: usize, mlp_ratio: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(&pb.pp(format!("layers.{i}")), dim, mlp_ratio))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        self.layers.iter().try_fold(tokens.clone(), |z, layer| layer.forward(&z))
    }
}

/// `(N, n, d)` tokens back onto an `(N, d, h, w)` grid.
pub fn tokens_to_grid(tokens: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
    let (n, len, d) = tokens.dims3()?;
    if len != grid.0 * grid.1 {
        return Err(Error::Shape(format!("{len} tokens do not fill a {}x{} grid", grid.0, grid.1)));
    }
    Ok(tokens.transpose(1, 2)?.contiguous()?.reshape((n, d, grid.0, grid.1))?)
}
