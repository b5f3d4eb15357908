//! Training loops, learning-rate schedule, image pool and telemetry.
//!
//! Trainers are looked up by name in a [`TrainerRegistry`]. All of them
//! share [`run`], which owns the epoch loop, the schedule, logging,
//! validation and checkpointing; a trainer only supplies the per-batch
//! update through [`StepRunner`].

mod cyclegan;
mod pix2pix;
mod pool;
mod unet;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use windflow_tensor::{AdamConfig, Tensor};

use crate::checkpoint::{save_checkpoint, Checkpoint, Normalization};
use crate::error::{Error, Result};
use crate::eval::{score_model, Scores};
use crate::nets::{flow_target, init_rng, model_input, Model, ModelSpec};
use crate::objectives::{LossReport, LAMBDA_CYCLE, LAMBDA_L1};
use crate::raster::{DatasetManifest, SamplePair};

pub use cyclegan::{cycle_networks, CycleGanTrainer};
pub use pix2pix::Pix2PixTrainer;
pub use pool::ImagePool;
pub use unet::UnetTrainer;

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.wgck";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Total epochs; the last `decay_epochs` of them decay linearly to zero.
    pub epochs: usize,
    pub decay_epochs: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub lambda_l1: f64,
    pub lambda_cycle: f64,
    /// Stop after this many generator updates.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            epochs: 70,
            decay_epochs: 20,
            pool_size: 50,
            seed: 0,
            eval_every: 1,
            checkpoint_dir: None,
            lambda_l1: LAMBDA_L1,
            lambda_cycle: LAMBDA_CYCLE,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 || self.decay_epochs > self.epochs {
            return bad(format!("epochs {} with {} decay epochs", self.epochs, self.decay_epochs));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("lr must be positive and betas in [0, 1)".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }

    pub fn flat_epochs(&self) -> usize {
        self.epochs - self.decay_epochs
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Learning rate for 0-based epoch `e`: constant, then a straight line that
/// reaches zero at `e == epochs`.
pub fn lr_at_epoch(e: usize, cfg: &TrainConfig) -> Result<f64> {
    if e > cfg.epochs {
        return Err(Error::InvalidConfig(format!("epoch {e} beyond the {} epoch schedule", cfg.epochs)));
    }
    let frac = (cfg.epochs - e) as f64 / (cfg.decay_epochs + 1) as f64;
    Ok(cfg.lr * frac.min(1.0))
}

/// Fraction of images whose mean patch probability lands on the right side
/// of 0.5. Only a mean strictly above 0.5 counts as a "real" verdict.
pub fn disc_accuracy(patch_probs: &[Vec<f64>], truth_real: &[bool]) -> Result<f64> {
    if patch_probs.is_empty() || patch_probs.iter().any(Vec::is_empty) {
        return Err(Error::EmptyBatch);
    }
    if patch_probs.len() != truth_real.len() {
        return Err(Error::Shape(format!("{} images, {} labels", patch_probs.len(), truth_real.len())));
    }
    let correct = patch_probs
        .iter()
        .zip(truth_real)
        .filter(|(p, &real)| (p.iter().sum::<f64>() / p.len() as f64 > 0.5) == real)
        .count();
    Ok(correct as f64 / truth_real.len() as f64)
}

/// Per-image patch means of a `[N, 1, h, w]` output, after `map`.
pub(crate) fn per_image(t: &Tensor<f32>, map: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    let per = t.numel() / n.max(1);
    t.data().chunks(per.max(1)).map(|c| c.iter().map(|&v| map(v as f64)).collect()).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Samples prepared for training, with the constants they were built from.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub name: String,
    pub normalization: Normalization,
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
}

impl TrainData {
    /// Split a dataset by its manifest's seeded split.
    pub fn from_dataset(manifest: &DatasetManifest, samples: &[SamplePair]) -> Self {
        let (train, test) = manifest.split();
        Self {
            name: manifest.name.clone(),
            normalization: Normalization::from_manifest(manifest),
            train: train.iter().map(|&i| samples[i].clone()).collect(),
            val: test.iter().map(|&i| samples[i].clone()).collect(),
        }
    }
}

/// One sample in model units: `x` is `[1, C, H, W]`, `y` is `[1, 1, H, W]`.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
}

pub(crate) fn prepare(samples: &[SamplePair], norm: &Normalization, with_sdf: bool) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                x: model_input(&s.geometry, norm.max_height, with_sdf)?.to_tensor(),
                y: flow_target(&s.flow, norm.v_max).to_tensor(),
            })
        })
        .collect()
}

/// Stack `[1, ...]` tensors along the batch axis.
pub(crate) fn stack(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.len();
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::from_vec(&shape, data)?)
}

/// A batch in model units.
pub struct Batch {
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
}

/// Independent random streams derived from the root seed.
pub struct Streams {
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub pool: ChaCha8Rng,
    pub power: ChaCha8Rng,
}

/// Init streams per network; shared across trainers so ablations start
/// from the same weights.
pub const INIT_STREAM_G: u64 = 10;
pub const INIT_STREAM_D: u64 = 11;
pub const INIT_STREAM_F: u64 = 12;
pub const INIT_STREAM_DY: u64 = 13;

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            shuffle: init_rng(seed, 1),
            dropout: init_rng(seed, 2),
            pool: init_rng(seed, 3),
            power: init_rng(seed, 4),
        }
    }
}

/// Outcome of one update.
pub struct StepOutcome {
    pub losses: LossReport,
    pub disc_accuracy: Option<f64>,
}

/// Per-batch update of one training method.
pub trait StepRunner {
    fn step(&mut self, batch: &Batch, lr: f64, streams: &mut Streams) -> Result<StepOutcome>;
    /// The generator scored during validation.
    fn generator(&self) -> &Model<f32>;
    /// `sigma(W / sigma_hat)` for every spectrally normalized layer.
    fn sn_sigmas(&self) -> Result<Vec<f64>>;
    fn write(&self, ckpt: &mut Checkpoint);
    fn updates(&self) -> BTreeMap<String, usize>;
}

/// One line of `train_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossReport,
    pub lr: f64,
    pub disc_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Mean supervised L1 in model units over the epoch's updates.
    pub train_l1: f64,
    pub loss_d: Option<f64>,
    pub disc_accuracy: Option<f64>,
    pub validation: Option<Scores>,
    /// Smallest and largest normalized spectral norm.
    pub sn_sigma: Option<(f64, f64)>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochSummary>,
    /// Update count per network prefix.
    pub updates: BTreeMap<String, usize>,
}

/// A training method, selected by name.
pub trait Trainer: Send + Sync {
    fn name(&self) -> &'static str;
    fn uses_discriminator(&self) -> bool;
    fn train(&self, data: &TrainData, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome>;
}

pub struct TrainerRegistry {
    trainers: Vec<Box<dyn Trainer>>,
}

impl TrainerRegistry {
    pub fn builtin() -> Self {
        Self {
            trainers: vec![Box::new(Pix2PixTrainer), Box::new(CycleGanTrainer), Box::new(UnetTrainer)],
        }
    }

    pub fn register(&mut self, trainer: Box<dyn Trainer>) {
        self.trainers.retain(|t| t.name() != trainer.name());
        self.trainers.push(trainer);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.trainers.iter().map(|t| t.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Trainer> {
        self.trainers
            .iter()
            .find(|t| t.name() == name)
            .map(|t| t.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: "trainer",
                name: name.to_string(),
            })
    }
}

/// Train with the method named in `spec.arch`.
pub fn train(data: &TrainData, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    TrainerRegistry::builtin().get(&spec.arch)?.train(data, spec, cfg)
}

pub(crate) fn check_data(data: &TrainData, spec: &ModelSpec) -> Result<()> {
    let first = data.train.first().ok_or(Error::EmptyBatch)?;
    if first.geometry.channel_count() != spec.generator.in_channels {
        return Err(Error::SpecMismatch(format!(
            "dataset has {} geometry channels, generator expects {}",
            first.geometry.channel_count(),
            spec.generator.in_channels
        )));
    }
    spec.generator.check_input(first.geometry.height(), first.geometry.width())
}

struct LogSink {
    file: Option<BufWriter<File>>,
}

impl LogSink {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Some(BufWriter::new(File::create(d.join(TRAIN_LOG))?))
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn line(&mut self, entry: &StepLog) -> Result<()> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, entry)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Shared epoch loop.
pub(crate) fn run(
    runner: &mut dyn StepRunner,
    data: &TrainData,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train: &[Prepared],
) -> Result<TrainOutcome> {
    let mut streams = Streams::new(cfg.seed);
    let mut sink = LogSink::open(cfg.checkpoint_dir.as_deref())?;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut global = 0usize;
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    let snapshot = |runner: &dyn StepRunner, epoch: usize| {
        let mut ckpt = Checkpoint::new(spec.clone(), data.normalization.clone(), epoch, cfg.seed, &data.name);
        runner.write(&mut ckpt);
        ckpt
    };

    for epoch in 0..cfg.epochs {
        if global >= budget {
            break;
        }
        let lr = lr_at_epoch(epoch, cfg)?;
        order.shuffle(&mut streams.shuffle);
        let first = steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            if global >= budget {
                break;
            }
            let batch = Batch {
                x: stack(&chunk.iter().map(|&i| &train[i].x).collect::<Vec<_>>())?,
                y: stack(&chunk.iter().map(|&i| &train[i].y).collect::<Vec<_>>())?,
            };
            let out = runner.step(&batch, lr, &mut streams)?;
            let entry = StepLog {
                epoch,
                step: global,
                losses: out.losses,
                lr,
                disc_accuracy: out.disc_accuracy,
            };
            sink.line(&entry)?;
            if !entry.losses.is_finite() {
                sink.flush()?;
                log::error!("non-finite loss at epoch {epoch}, step {global}: {:?}", entry.losses);
                return Err(Error::NonFiniteLoss { epoch, step: global });
            }
            steps.push(entry);
            global += 1;
        }
        let done = &steps[first..];
        let last = epoch + 1 == cfg.epochs || global >= budget;
        let validate = (epoch + 1) % cfg.eval_every == 0 || last;
        let validation = if validate && !data.val.is_empty() {
            Some(score_model(runner.generator(), &spec.generator, &data.normalization, &data.val)?)
        } else {
            None
        };
        let sigmas = runner.sn_sigmas()?;
        let summary = EpochSummary {
            epoch,
            steps: done.len(),
            lr,
            train_l1: mean(done.iter().map(|s| s.losses.loss_g_l1)).unwrap_or(f64::NAN),
            loss_d: mean(done.iter().filter_map(|s| s.losses.loss_d)),
            disc_accuracy: mean(done.iter().filter_map(|s| s.disc_accuracy)),
            validation,
            sn_sigma: (!sigmas.is_empty()).then(|| {
                sigmas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)))
            }),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} train L1 {:.4}{}",
            summary.train_l1,
            summary.validation.as_ref().map(|v| format!(" val MAE {:.4}", v.mae)).unwrap_or_default()
        );
        epochs.push(summary);
        if let (Some(dir), true, false) = (&cfg.checkpoint_dir, validate, last) {
            save_checkpoint(&dir.join(format!("epoch_{:03}.wgck", epoch + 1)), &snapshot(runner, epoch + 1))?;
        }
    }
    sink.flush()?;
    let checkpoint = snapshot(runner, epochs.len());
    if let Some(dir) = &cfg.checkpoint_dir {
        save_checkpoint(&dir.join(FINAL_CHECKPOINT), &checkpoint)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        steps,
        epochs,
        updates: runner.updates(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &cfg).unwrap(), 2e-4);
        assert_eq!(lr_at_epoch(49, &cfg).unwrap(), 2e-4);
        assert!(lr_at_epoch(50, &cfg).unwrap() < 2e-4);
        assert_eq!(lr_at_epoch(70, &cfg).unwrap(), 0.0);
        assert!(lr_at_epoch(71, &cfg).is_err());
    }

    #[test]
    fn accuracy_uses_a_strict_threshold() {
        assert_eq!(disc_accuracy(&[vec![0.9; 4]], &[true]).unwrap(), 1.0);
        assert_eq!(disc_accuracy(&[vec![0.5; 4]], &[true]).unwrap(), 0.0);
        assert_eq!(disc_accuracy(&[vec![0.5; 4]], &[false]).unwrap(), 1.0);
        assert!(matches!(disc_accuracy(&[], &[]), Err(Error::EmptyBatch)));
    }
}
