//! Training loop, step learning-rate schedule, evaluation and the overfit smoke harness.

pub mod data;
pub mod optimizer;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DensityMap, FixationMap, Grid, ImageTensor, LoadedImage};
use crate::error::{Error, Result};
use crate::net::layers::BATCH_NORM_MOMENTUM;
use crate::net::SaliencyModel;
use crate::objectives::{composite_loss_tensor, correlation_coefficient, evaluate_dataset, EvalPair, LossWeights, MetricsReport};
use crate::pipeline::SaliencyPredictor;

pub use data::{load_eval_items, load_training_samples, scan_saliency_dir, SaliencyRecord};
pub use optimizer::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Epochs between learning-rate decays.
    pub lr_step_size: usize,
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Reshuffle sample order each epoch (seeded).
    pub shuffle: bool,
    /// Stop after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<usize>,
    /// Optimizer steps per epoch. Unset means one pass over the data; when
    /// set, batches keep cycling through reshuffled passes across epochs.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 5e-4,
            lr_step_size: 4,
            lr_gamma: 0.1,
            weight_decay: 1e-4,
            epochs: 12,
            batch_size: 8,
            seed: 0,
            loss_weights: LossWeights::default(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            shuffle: true,
            max_steps: None,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        let positive = [self.initial_lr, self.lr_gamma, self.adam_eps];
        if !positive.iter().all(|v| v.is_finite() && *v >= 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("learning rate, gamma, decay and eps must be nonnegative"));
        }
        if self.lr_step_size == 0 || self.batch_size == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("lr_step_size, batch_size and steps_per_epoch must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `initial_lr · gamma^⌊epoch / step⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_gamma.powi((epoch / self.lr_step_size) as i32)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One training example at the model's working resolution.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub name: String,
    pub image: ImageTensor,
    pub text_map: ImageTensor,
    pub density: DensityMap,
    pub fixations: Option<FixationMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    /// Loss of every step in this epoch, in order.
    pub step_losses: Vec<f64>,
    pub fusion_weights: Vec<f64>,
    pub validation: Option<MetricsReport>,
    pub wall_time_s: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
}

impl TrainRecord {
    /// One JSON object per epoch.
    pub fn to_ndjson(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }

    pub fn total_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.steps).sum()
    }

    pub fn step_losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.epochs.iter().flat_map(|e| e.step_losses.iter().copied())
    }
}

#[derive(Debug, Default)]
pub struct TrainOptions<'a> {
    pub validation: Option<&'a [TrainSample]>,
    /// Writes `epoch-NNN.safetensors` here after every epoch.
    pub checkpoint_dir: Option<&'a Path>,
    /// Appends each epoch record as it completes.
    pub record_path: Option<&'a Path>,
}

fn batch_tensors(model: &SaliencyModel, batch: &[&TrainSample]) -> Result<(Tensor, Tensor, Tensor)> {
    let images: Vec<&ImageTensor> = batch.iter().map(|s| &s.image).collect();
    let texts: Vec<&ImageTensor> = batch.iter().map(|s| &s.text_map).collect();
    let (h, w) = model.working_size();
    let mut g = Vec::with_capacity(batch.len() * h * w);
    for s in batch {
        if s.density.shape() != (h, w) {
            return Err(Error::Shape(format!(
                "density for {} is {:?}, expected working size {:?}",
                s.name,
                s.density.shape(),
                (h, w)
            )));
        }
        g.extend_from_slice(&s.density.grid().data);
    }
    let target = Tensor::from_vec(g, (batch.len(), 1, h, w), model.device())?.to_dtype(model.dtype())?;
    Ok((model.batch_tensor(&images)?, model.batch_tensor(&texts)?, target))
}

/// Composite loss of `model` on a batch, in training mode (updates batch-norm statistics).
pub fn batch_loss(model: &SaliencyModel, batch: &[&TrainSample], weights: &LossWeights) -> Result<Tensor> {
    let (x, t, g) = batch_tensors(model, batch)?;
    let pred = model.forward(&x, &t, true)?;
    composite_loss_tensor(&pred, &g, weights)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Minimizes the composite loss with Adam under the step schedule.
/// Aborts with [`Error::Diverged`] on a non-finite loss.
pub fn train(
    model: &SaliencyModel,
    samples: &[TrainSample],
    config: &TrainConfig,
    options: &TrainOptions<'_>,
) -> Result<TrainRecord> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut adam = Adam::new(config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut record = TrainRecord::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut total_steps = 0usize;
    let mut cursor = 0usize;
    let steps_per_epoch = config
        .steps_per_epoch
        .unwrap_or_else(|| samples.len().div_ceil(config.batch_size));
    if let Some(path) = options.record_path {
        std::fs::write(path, "").map_err(|e| Error::io(path, e))?;
    }
    for epoch in 0..config.epochs {
        if config.max_steps.is_some_and(|m| total_steps >= m) {
            break;
        }
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        let mut step_losses = Vec::new();
        for _ in 0..steps_per_epoch {
            if config.max_steps.is_some_and(|m| total_steps >= m) {
                break;
            }
            if cursor == 0 && config.shuffle {
                order.shuffle(&mut rng);
            }
            let end = (cursor + config.batch_size).min(order.len());
            let batch: Vec<&TrainSample> = order[cursor..end].iter().map(|&i| &samples[i]).collect();
            cursor = if end == order.len() { 0 } else { end };
            let loss = batch_loss(model, &batch, &config.loss_weights)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss became {value} at epoch {epoch}, step {total_steps}"
                )));
            }
            let grads = loss.backward()?;
            adam.step(model.store(), &grads, lr)?;
            step_losses.push(value);
            total_steps += 1;
            log::debug!("epoch {epoch} step {total_steps} loss {value:.6}");
        }
        let validation = match options.validation {
            Some(v) if !v.is_empty() => Some(evaluate_samples(model, v)?),
            _ => None,
        };
        let checkpoint = match options.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(format!("epoch-{:03}.safetensors", epoch + 1));
                model.save_checkpoint(&path, Some(epoch + 1))?;
                Some(path)
            }
            None => None,
        };
        let steps = step_losses.len();
        let train_loss = step_losses.iter().sum::<f64>() / steps.max(1) as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            steps,
            train_loss,
            step_losses,
            fusion_weights: model.fusion_weights()?,
            validation,
            wall_time_s: started.elapsed().as_secs_f64(),
            checkpoint,
        };
        log::info!(
            "epoch {epoch}: lr {lr:e}, loss {train_loss:.5}, sigma(alpha) {:?}",
            rec.fusion_weights
        );
        if let Some(path) = options.record_path {
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| Error::io(path, e))?;
        }
        record.epochs.push(rec);
    }
    Ok(record)
}

/// Replaces the batch-norm running statistics with batch statistics of the
/// current weights, averaged over `samples` in batches of `batch_size`.
/// Running averages gathered while the weights moved lag behind them; this
/// brings evaluation mode back in line with training mode.
pub fn recalibrate_batch_norm(model: &SaliencyModel, samples: &[TrainSample], batch_size: usize) -> Result<()> {
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::invalid("recalibration needs samples and a positive batch size"));
    }
    let zeros = model
        .snapshot_buffers()?
        .iter()
        .map(|t| t.zeros_like())
        .collect::<candle_core::Result<Vec<_>>>()?;
    let mut sums: Option<Vec<Tensor>> = None;
    let mut batches = 0usize;
    for chunk in samples.chunks(batch_size) {
        // From zero, one training-mode pass leaves momentum × batch statistics.
        model.restore_buffers(&zeros)?;
        let batch: Vec<&TrainSample> = chunk.iter().collect();
        let (x, t, _) = batch_tensors(model, &batch)?;
        model.forward(&x, &t, true)?;
        let stats = model.snapshot_buffers()?;
        sums = Some(match sums {
            None => stats,
            Some(acc) => acc
                .iter()
                .zip(&stats)
                .map(|(a, b)| a + b)
                .collect::<candle_core::Result<Vec<_>>>()?,
        });
        batches += 1;
    }
    let scale = 1.0 / (BATCH_NORM_MOMENTUM * batches as f64);
    let averaged = sums
        .unwrap_or_default()
        .iter()
        .map(|t| t.affine(scale, 0.0))
        .collect::<candle_core::Result<Vec<_>>>()?;
    model.restore_buffers(&averaged)
}

/// Working-resolution prediction for a prepared sample (evaluation mode).
pub fn predict_sample(model: &SaliencyModel, sample: &TrainSample) -> Result<Grid> {
    model.predict_grid(&sample.image, &sample.text_map)
}

/// Metric suite over prepared samples, at working resolution.
pub fn evaluate_samples(model: &SaliencyModel, samples: &[TrainSample]) -> Result<MetricsReport> {
    let pairs = samples
        .iter()
        .map(|s| {
            Ok(EvalPair {
                name: s.name.clone(),
                prediction: crate::datamodel::SaliencyMap::new(clamped(predict_sample(model, s)?))?,
                density: s.density.clone(),
                fixations: s.fixations.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_dataset(&pairs)
}

fn clamped(mut g: Grid) -> Grid {
    for v in &mut g.data {
        *v = v.clamp(0.0, 1.0);
    }
    g
}

/// A ground-truth example on disk for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub name: String,
    pub image: LoadedImage,
    pub density: DensityMap,
    pub fixations: Option<FixationMap>,
}

/// Runs a predictor over every item and scores it against the stored ground truth.
pub fn evaluate(predictor: &dyn SaliencyPredictor, items: &[EvalItem]) -> Result<MetricsReport> {
    let pairs = items
        .iter()
        .map(|it| {
            Ok(EvalPair {
                name: it.name.clone(),
                prediction: predictor.predict(&it.image)?,
                density: it.density.clone(),
                fixations: it.fixations.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_dataset(&pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmokeReport {
    pub passed: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_cc: f64,
    pub steps: usize,
    pub diverged: bool,
    pub reason: Option<String>,
    pub record: TrainRecord,
}

/// Composite loss of the whole set as one training-mode batch. Batch-norm
/// running statistics are restored afterwards, so the model is unchanged.
pub fn dataset_loss(model: &SaliencyModel, samples: &[TrainSample], weights: &LossWeights) -> Result<f64> {
    let saved = model.snapshot_buffers()?;
    let batch: Vec<&TrainSample> = samples.iter().collect();
    let loss = batch_loss(model, &batch, weights).and_then(|l| scalar(&l));
    model.restore_buffers(&saved)?;
    loss
}

fn train_cc(model: &SaliencyModel, samples: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = predict_sample(model, s)?;
        total += correlation_coefficient(s.density.grid(), &pred).unwrap_or(0.0);
    }
    Ok(total / samples.len() as f64)
}

/// Trains on a tiny set (at most 8 samples, at most 200 steps) and passes iff
/// the loss at least halves and the mean train-set CC reaches 0.85. The loss
/// is the whole-set batch loss before and after training; CC is measured on
/// evaluation-mode predictions after batch-norm recalibration on the set.
pub fn overfit_smoke(model: &SaliencyModel, samples: &[TrainSample], config: &TrainConfig) -> Result<SmokeReport> {
    if samples.is_empty() || samples.len() > 8 {
        return Err(Error::invalid("overfit smoke takes between 1 and 8 samples"));
    }
    let max_steps = config.max_steps.unwrap_or(200).min(200);
    let config = TrainConfig {
        max_steps: Some(max_steps),
        ..config.clone()
    };
    let initial_loss = dataset_loss(model, samples, &config.loss_weights)?;
    let failed = |reason: String, diverged: bool| SmokeReport {
        passed: false,
        initial_loss,
        final_loss: f64::NAN,
        train_cc: f64::NAN,
        steps: 0,
        diverged,
        reason: Some(reason),
        record: TrainRecord::default(),
    };
    if !initial_loss.is_finite() {
        return Ok(failed(format!("diverged: initial loss is {initial_loss}"), true));
    }
    let record = match train(model, samples, &config, &TrainOptions::default()) {
        Ok(r) => r,
        Err(Error::Diverged(msg)) => return Ok(failed(format!("diverged: {msg}"), true)),
        Err(e) => return Err(e),
    };
    let final_loss = dataset_loss(model, samples, &config.loss_weights)?;
    recalibrate_batch_norm(model, samples, config.batch_size)?;
    let cc = train_cc(model, samples)?;
    let halved = final_loss <= initial_loss - 0.5 * initial_loss.abs();
    let reason = if !(final_loss < initial_loss) {
        Some("no improvement".to_owned())
    } else if !halved {
        Some(format!("loss fell from {initial_loss:.4} to {final_loss:.4}, less than half"))
    } else if cc < 0.85 {
        Some(format!("train-set CC {cc:.4} below 0.85"))
    } else {
        None
    };
    Ok(SmokeReport {
        passed: reason.is_none(),
        initial_loss,
        final_loss,
        train_cc: cc,
        steps: record.total_steps(),
        diverged: false,
        reason,
        record,
    })
}

/// Seeded toy samples: a bright blob on a dim noisy background, with a
/// Gaussian density centred on the blob and a fixation at its centre.
pub fn synthetic_samples(count: usize, (h, w): (usize, usize), seed: u64) -> Result<Vec<TrainSample>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let cy = rng.random_range(0.2..0.8) * h as f64;
            let cx = rng.random_range(0.2..0.8) * w as f64;
            let sigma = 0.12 * h.min(w) as f64;
            let tint: [f32; 3] = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
            let noise: Vec<f32> = (0..h * w * 3).map(|_| rng.random_range(0.0..0.15)).collect();
            let bump = |r: usize, c: usize| {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                (-d2 / (2.0 * sigma * sigma)).exp()
            };
            let image = ImageTensor::from_fn(h, w, |r, c, ch| {
                (noise[(r * w + c) * 3 + ch] + tint[ch] * bump(r, c) as f32).min(1.0)
            })?;
            let density = DensityMap::new(Grid::from_fn(h, w, bump)?)?;
            let (fr, fc) = ((cy as usize).min(h - 1), (cx as usize).min(w - 1));
            let fixations = FixationMap::from_points(h, w, &[(fr, fc)])?;
            Ok(TrainSample {
                name: format!("synthetic-{i}"),
                text_map: ImageTensor::zeros(h, w),
                image,
                density,
                fixations: Some(fixations),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_every_four_epochs() {
        let c = TrainConfig::default();
        for e in 0..4 {
            assert_eq!(c.lr_at(e), 5e-4);
        }
        for e in 4..8 {
            assert!((c.lr_at(e) - 5e-5).abs() < 1e-18);
        }
        assert!((c.lr_at(8) - 5e-6).abs() < 1e-18);
    }

    #[test]
    fn defaults_follow_the_published_schedule() {
        let c = TrainConfig::default();
        assert_eq!((c.initial_lr, c.lr_step_size, c.lr_gamma, c.weight_decay), (5e-4, 4, 0.1, 1e-4));
        assert_eq!(c.batch_size, 8);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_rejects_zero_batch() {
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
