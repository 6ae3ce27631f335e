//! Building models and detectors from command-line and environment settings.

use std::path::PathBuf;
use std::sync::Arc;

use brand_attention::adapter::CommandAdapter;
use brand_attention::brand_score::{CommandLogoDetector, LogoDetector, StubLogoDetector};
use brand_attention::net::{DType, ModelConfig, SaliencyModel};
use brand_attention::pipeline::SaliencyPipeline;
use brand_attention::textmap::{CommandTextDetector, StubTextDetector, TextDetector};
use brand_attention::{Error, Result};

/// Parses `HxW`, e.g. `288x384`.
pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size `{s}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct ModelArgs {
    /// Trained checkpoint (.safetensors). Without one, a seeded randomly
    /// initialized model is used.
    #[arg(long, env = "BRAND_ATTENTION_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Model config JSON, for runs without a checkpoint.
    #[arg(long, value_name = "JSON")]
    pub model_config: Option<PathBuf>,
    /// Working resolution HEIGHTxWIDTH, for runs without a checkpoint.
    #[arg(long, value_parser = parse_size, value_name = "HxW")]
    pub resolution: Option<(usize, usize)>,
    /// Classification-pretrained ResNet-50 weights (safetensors, torchvision names).
    #[arg(long, env = "BRAND_ATTENTION_BACKBONE")]
    pub backbone: Option<PathBuf>,
    /// Seed for random initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Text detector command line; the image path is appended.
    #[arg(long, env = "BRAND_ATTENTION_TEXT_DETECTOR", value_name = "COMMAND")]
    pub text_detector: Option<String>,
}

impl ModelArgs {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut config = match &self.model_config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                ModelConfig::from_json(&text)?
            }
            None => ModelConfig::default(),
        };
        if let Some((h, w)) = self.resolution {
            config = config.with_resolution(h, w);
        }
        Ok(config)
    }

    pub fn build_model(&self) -> Result<SaliencyModel> {
        let model = match &self.checkpoint {
            Some(path) => {
                if self.model_config.is_some() || self.resolution.is_some() {
                    log::warn!("checkpoint given: ignoring --model-config and --resolution");
                }
                SaliencyModel::load_checkpoint(path)?.0
            }
            None => {
                log::warn!("no checkpoint given: using a randomly initialized model (seed {})", self.seed);
                SaliencyModel::new(self.model_config()?, self.seed, DType::F32)?
            }
        };
        if let Some(path) = &self.backbone {
            let n = model.load_backbone_weights(path)?;
            log::info!("loaded {n} backbone tensors from {}", path.display());
        }
        Ok(model)
    }

    pub fn text_detector(&self) -> Result<Arc<dyn TextDetector>> {
        match self.text_detector.as_deref() {
            Some(line) => Ok(Arc::new(CommandTextDetector::new(CommandAdapter::from_command_line(line)?))),
            None => {
                log::warn!("no text detector configured: text maps will be empty");
                Ok(Arc::new(StubTextDetector::none()))
            }
        }
    }

    pub fn pipeline(&self) -> Result<SaliencyPipeline> {
        Ok(SaliencyPipeline::new(Arc::new(self.build_model()?), self.text_detector()?))
    }
}

/// `stub` is a detector that never finds anything; anything else is a
/// command line with the image path appended.
pub fn logo_detector(spec: Option<&str>) -> Result<Option<Arc<dyn LogoDetector>>> {
    Ok(match spec {
        None => None,
        Some("stub") => Some(Arc::new(StubLogoDetector::default())),
        Some(line) => Some(Arc::new(CommandLogoDetector::new(CommandAdapter::from_command_line(line)?))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("288x384"), Ok((288, 384)));
        assert_eq!(parse_size("32X64"), Ok((32, 64)));
        assert!(parse_size("288").is_err());
        assert!(parse_size("ax3").is_err());
    }
}
