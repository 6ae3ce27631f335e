//! Named parameter storage with seeded, construction-order initialization.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// A trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    /// Whether weight decay applies (false for normalization affine terms,
    /// fusion weights and biases of normalization layers).
    pub decay: bool,
}

/// All tensors of a model: trainable parameters and non-trainable buffers
/// (batch-norm running statistics), keyed by dotted hierarchical names.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub params: BTreeMap<String, Param>,
    pub buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name).map(|p| &p.var)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|p| p.var.elem_count()).sum()
    }

    /// Every tensor, parameters and buffers, by name.
    pub fn all_tensors(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params
            .iter()
            .map(|(k, p)| (k, &p.var))
            .chain(self.buffers.iter())
    }
}

enum Init {
    Normal(f64),
    TruncNormal(f64),
    Uniform(f64),
    Const(f64),
}

struct Shared {
    rng: ChaCha8Rng,
    store: ParamStore,
    dtype: DType,
    device: Device,
    zeroed: bool,
}

/// Hands out parameters under a name prefix, drawing initial values from one
/// seeded stream so that construction order fully determines the model.
#[derive(Clone)]
pub struct ParamBuilder {
    shared: Rc<RefCell<Shared>>,
    prefix: String,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            shared: Rc::new(RefCell::new(Shared {
                rng: ChaCha8Rng::seed_from_u64(seed),
                store: ParamStore::default(),
                dtype,
                device,
                zeroed: false,
            })),
            prefix: String::new(),
        }
    }

    /// Builder that skips random initialization and zero-fills every tensor.
    pub fn new_zeroed(dtype: DType, device: Device) -> Self {
        let b = Self::new(0, dtype, device);
        b.shared.borrow_mut().zeroed = true;
        b
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_owned()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Self {
            shared: self.shared.clone(),
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn make(&self, shape: &[usize], init: Init) -> Result<Var> {
        let mut shared = self.shared.borrow_mut();
        let n: usize = shape.iter().product();
        if shared.zeroed {
            return Ok(Var::zeros(shape, shared.dtype, &shared.device)?);
        }
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Uniform(bound) => (0..n).map(|_| shared.rng.random_range(-bound..bound)).collect(),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| dist.sample(&mut shared.rng)).collect()
            }
            Init::TruncNormal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n)
                    .map(|_| loop {
                        let v: f64 = dist.sample(&mut shared.rng);
                        if v.abs() <= 2.0 * std {
                            break v;
                        }
                    })
                    .collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &shared.device)?.to_dtype(shared.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    fn register(&self, name: &str, shape: &[usize], init: Init, decay: bool) -> Result<Tensor> {
        let var = self.make(shape, init)?;
        let t = var.as_tensor().clone();
        let full = self.full_name(name);
        let previous = self.shared.borrow_mut().store.params.insert(full.clone(), Param { var, decay });
        assert!(previous.is_none(), "duplicate parameter {full}");
        Ok(t)
    }

    /// He-normal init scaled by fan-out, as used for residual-network convolutions.
    pub fn kaiming_fan_out(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let fan_out = shape[0] * shape[2..].iter().product::<usize>();
        self.register(name, shape, Init::Normal((2.0 / fan_out as f64).sqrt()), true)
    }

    /// Uniform init bounded by `1/sqrt(fan_in)`.
    pub fn uniform_fan_in(&self, name: &str, shape: &[usize], fan_in: usize, decay: bool) -> Result<Tensor> {
        self.register(name, shape, Init::Uniform(1.0 / (fan_in as f64).sqrt()), decay)
    }

    pub fn trunc_normal(&self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        self.register(name, shape, Init::TruncNormal(std), true)
    }

    pub fn constant(&self, name: &str, shape: &[usize], value: f64, decay: bool) -> Result<Tensor> {
        self.register(name, shape, Init::Const(value), decay)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let var = self.make(shape, Init::Const(value))?;
        let full = self.full_name(name);
        self.shared.borrow_mut().store.buffers.insert(full, var.clone());
        Ok(var)
    }

    pub fn dtype(&self) -> DType {
        self.shared.borrow().dtype
    }

    pub fn device(&self) -> Device {
        self.shared.borrow().device.clone()
    }

    /// Finishes construction and returns the populated store.
    pub fn into_store(self) -> ParamStore {
        std::mem::take(&mut self.shared.borrow_mut().store)
    }
}
