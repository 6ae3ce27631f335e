//! Checkpoint archive: every named tensor plus a JSON header, in safetensors.
//!
//! The header lives under a single metadata key so the file bytes are fully
//! determined by the model state.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::model::{ModelConfig, SaliencyModel};

pub const FORMAT_VERSION: u32 = 1;
const HEADER_KEY: &str = "brand_attention";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    /// Raw fusion parameters.
    pub alpha: Vec<f64>,
    /// Epochs completed when the checkpoint was written.
    #[serde(default)]
    pub epoch: Option<usize>,
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Malformed {
        what: "checkpoint",
        message: message.into(),
    }
}

impl SaliencyModel {
    pub fn checkpoint_header(&self, epoch: Option<usize>) -> Result<CheckpointHeader> {
        Ok(CheckpointHeader {
            format_version: FORMAT_VERSION,
            config: self.config().clone(),
            seed: self.seed(),
            alpha: self.alpha_values()?,
            epoch,
        })
    }

    pub fn to_checkpoint_bytes(&self, epoch: Option<usize>) -> Result<Vec<u8>> {
        let header = serde_json::to_string(&self.checkpoint_header(epoch)?).expect("header serializes");
        let tensors: Vec<(String, Tensor)> = self
            .store()
            .all_tensors()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        let meta = HashMap::from([(HEADER_KEY.to_owned(), header)]);
        safetensors::serialize(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(meta))
            .map_err(|e| Error::Model(format!("cannot serialize checkpoint: {e}")))
    }

    pub fn save_checkpoint(&self, path: &Path, epoch: Option<usize>) -> Result<()> {
        let bytes = self.to_checkpoint_bytes(epoch)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, CheckpointHeader)> {
        let header = read_header(bytes)?;
        let tensors = candle_core::safetensors::load_buffer(bytes, &Device::Cpu)
            .map_err(|e| malformed(format!("unreadable tensor data: {e}")))?;
        let dtype = tensors
            .values()
            .next()
            .map(|t| t.dtype())
            .ok_or_else(|| malformed("no tensors"))?;
        if !matches!(dtype, DType::F32 | DType::F64) {
            return Err(malformed(format!("unsupported dtype {dtype:?}")));
        }
        let model = SaliencyModel::new_unfilled(header.config.clone(), header.seed, dtype)?;
        let mut expected = 0;
        for (name, var) in model.store().all_tensors() {
            expected += 1;
            let t = tensors
                .get(name)
                .ok_or_else(|| malformed(format!("missing tensor {name}")))?;
            if t.dims() != var.dims() || t.dtype() != dtype {
                return Err(malformed(format!(
                    "tensor {name} is {:?} {:?}, expected {:?} {dtype:?}",
                    t.dims(),
                    t.dtype(),
                    var.dims()
                )));
            }
            var.set(t)?;
        }
        if tensors.len() != expected {
            let extra: Vec<_> = tensors
                .keys()
                .filter(|k| model.store().all_tensors().all(|(n, _)| n != *k))
                .take(3)
                .collect();
            return Err(malformed(format!("unexpected tensors such as {extra:?}")));
        }
        Ok((model, header))
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Copies classification-pretrained backbone tensors (torchvision names such
    /// as `layer3.2.conv2.weight`) into both encoders. Keys without a match,
    /// like the classifier head, are ignored. Returns how many tensors were set.
    pub fn load_backbone_weights(&self, path: &Path) -> Result<usize> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)
            .map_err(|e| Error::Malformed {
                what: "backbone weights",
                message: e.to_string(),
            })?;
        let mut loaded = 0;
        for (key, t) in &tensors {
            for prefix in ["image_encoder", "text_encoder"] {
                let name = format!("{prefix}.{key}");
                let target = self
                    .store()
                    .all_tensors()
                    .find(|(n, _)| **n == name)
                    .map(|(_, v)| v.clone());
                if let Some(var) = target {
                    if t.dims() != var.dims() {
                        return Err(Error::Malformed {
                            what: "backbone weights",
                            message: format!("{key} has shape {:?}, expected {:?}", t.dims(), var.dims()),
                        });
                    }
                    var.set(&t.to_dtype(self.dtype())?)?;
                    loaded += 1;
                }
            }
        }
        if loaded == 0 {
            return Err(Error::Malformed {
                what: "backbone weights",
                message: "no tensor names match the encoder".into(),
            });
        }
        Ok(loaded)
    }

    /// Stable identifier of the current weights.
    pub fn checkpoint_id(&self) -> Result<String> {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (name, var) in self.store().all_tensors() {
            h.write(name.as_bytes());
            for v in var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                h.write_u64(v.to_bits());
            }
        }
        Ok(format!("{:016x}", h.finish()))
    }
}

/// Reads and validates the header without loading tensors.
pub fn read_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    let (_, meta) =
        safetensors::SafeTensors::read_metadata(bytes).map_err(|e| malformed(format!("not a safetensors archive: {e}")))?;
    let raw = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| malformed("missing header"))?;
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(malformed(format!("unsupported format_version {v}"))),
        None => return Err(malformed("missing format_version")),
    }
    let header: CheckpointHeader = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    header.config.validate()?;
    Ok(header)
}
