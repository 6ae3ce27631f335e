//! The composite training objective, on grids and on differentiable tensors.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::datamodel::Grid;
use crate::error::{Error, Result};
use crate::objectives::metrics::{correlation_coefficient, kl_divergence_with, mse, EPSILON};

/// Coefficients of `kl·KL + cc·CC + mse·MSE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub kl: f64,
    pub cc: f64,
    pub mse: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kl: 10.0,
            cc: -3.0,
            mse: 5.0,
            epsilon: EPSILON,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("loss epsilon must be positive"));
        }
        if ![self.kl, self.cc, self.mse].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("loss weights must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    pub kl: f64,
    pub cc: f64,
    pub mse: f64,
    pub total: f64,
}

pub fn loss_terms(gs: &Grid, s: &Grid, w: &LossWeights) -> Result<LossTerms> {
    w.validate()?;
    let kl = kl_divergence_with(gs, s, w.epsilon)?;
    let cc = correlation_coefficient(gs, s)?;
    let m = mse(gs, s)?;
    Ok(LossTerms {
        kl,
        cc,
        mse: m,
        total: w.kl * kl + w.cc * cc + w.mse * m,
    })
}

pub fn composite_loss(gs: &Grid, s: &Grid, w: &LossWeights) -> Result<f64> {
    Ok(loss_terms(gs, s, w)?.total)
}

/// Batch mean of the composite loss. `pred` and `target` are `(N, …)` with
/// identical shapes; each sample is flattened.
pub fn composite_loss_tensor(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<Tensor> {
    w.validate()?;
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    let n = pred.dim(0)?;
    let s = pred.reshape((n, ()))?;
    let g = target.reshape((n, ()))?.to_dtype(s.dtype())?.detach();
    let eps = w.epsilon;

    let g_hat = g.broadcast_div(&g.sum_keepdim(1)?)?;
    let s_hat = s.broadcast_div(&s.sum_keepdim(1)?)?;
    let ratio = (&g_hat / (s_hat + eps)?)?;
    let kl = (&g_hat * (ratio + eps)?.log()?)?.sum(1)?;

    let gc = g.broadcast_sub(&g.mean_keepdim(1)?)?;
    let sc = s.broadcast_sub(&s.mean_keepdim(1)?)?;
    let cov = (&gc * &sc)?.mean(1)?;
    let std_g = gc.sqr()?.mean(1)?.sqrt()?;
    let std_s = sc.sqr()?.mean(1)?.sqrt()?;
    let cc = (cov / (std_g * std_s)?)?;

    let m = (&s - &g)?.sqr()?.mean(1)?;

    let per_sample = (((kl * w.kl)? + (cc * w.cc)?)? + (m * w.mse)?)?;
    Ok(per_sample.mean(0)?)
}
