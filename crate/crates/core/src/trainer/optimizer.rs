//! Adam with L2 weight decay folded into the gradient, updating parameters in place.

use std::cell::RefCell;

use candle_core::backprop::GradStore;
use candle_core::{CpuStorage, InplaceOp2, Layout};

use crate::error::{Error, Result};
use crate::net::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments, stored in the parameter's own precision.
#[derive(Debug, Default)]
enum Moments {
    #[default]
    Empty,
    F32(Vec<f32>, Vec<f32>),
    F64(Vec<f64>, Vec<f64>),
}

trait Element: Copy {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Per-parameter state, keyed by the parameter's position in the store.
#[derive(Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    state: Vec<Moments>,
}

struct Kernel<'a> {
    moments: RefCell<&'a mut Moments>,
    lr: f64,
    decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias1: f64,
    bias2: f64,
}

impl Kernel<'_> {
    fn update<T: Element>(&self, p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]) {
        for i in 0..p.len() {
            let pi = p[i].to_f64();
            let gi = g[i].to_f64() + self.decay * pi;
            let mi = self.beta1 * m[i].to_f64() + (1.0 - self.beta1) * gi;
            let vi = self.beta2 * v[i].to_f64() + (1.0 - self.beta2) * gi * gi;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let denom = (vi / self.bias2).sqrt() + self.eps;
            p[i] = T::from_f64(pi - self.lr * (mi / self.bias1) / denom);
        }
    }
}

fn span(l: &Layout) -> candle_core::Result<(usize, usize)> {
    l.contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("adam expects contiguous tensors".into()))
}

impl InplaceOp2 for Kernel<'_> {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn cpu_fwd(&self, s1: &mut CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<()> {
        let (a0, a1) = span(l1)?;
        let (b0, b1) = span(l2)?;
        let n = a1 - a0;
        let mut st = self.moments.borrow_mut();
        match (s1, s2) {
            (CpuStorage::F32(p), CpuStorage::F32(g)) => {
                if matches!(**st, Moments::Empty) {
                    **st = Moments::F32(vec![0.0; n], vec![0.0; n]);
                }
                if let Moments::F32(m, v) = &mut **st {
                    self.update(&mut p[a0..a1], &g[b0..b1], m, v);
                    return Ok(());
                }
            }
            (CpuStorage::F64(p), CpuStorage::F64(g)) => {
                if matches!(**st, Moments::Empty) {
                    **st = Moments::F64(vec![0.0; n], vec![0.0; n]);
                }
                if let Moments::F64(m, v) = &mut **st {
                    self.update(&mut p[a0..a1], &g[b0..b1], m, v);
                    return Ok(());
                }
            }
            _ => {}
        }
        Err(candle_core::Error::Msg("adam supports matching f32 or f64 tensors".into()))
    }
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            state: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Parameters without a gradient are
    /// left untouched; decay applies only to parameters flagged for it.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        if self.state.is_empty() {
            self.state.resize_with(params.params.len(), Moments::default);
        }
        if self.state.len() != params.params.len() {
            return Err(Error::Model("optimizer state does not match the parameter set".into()));
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (param, moments) in params.params.values().zip(self.state.iter_mut()) {
            let Some(grad) = grads.get(param.var.as_tensor()) else {
                continue;
            };
            let grad = grad.contiguous()?;
            let kernel = Kernel {
                moments: RefCell::new(moments),
                lr,
                decay: if param.decay { c.weight_decay } else { 0.0 },
                beta1: c.beta1,
                beta2: c.beta2,
                eps: c.eps,
                bias1,
                bias2,
            };
            param.var.as_tensor().inplace_op2(&grad, &kernel)?;
        }
        Ok(())
    }
}
