use std::collections::BTreeMap;

use windflow_tensor::{Adam, Tape};

use super::{
    check_data, disc_accuracy, per_image, prepare, run, sigmoid, Batch, StepOutcome, StepRunner, Streams, TrainConfig,
    TrainData, TrainOutcome, Trainer, INIT_STREAM_D, INIT_STREAM_G,
};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nets::{build_discriminator, build_generator, init_rng, Model, ModelSpec};
use crate::objectives::{disc_bce_graph, gen_bce_graph, l1_graph, pix2pix_graph, LossReport};

/// Conditional GAN: the discriminator judges (geometry, flow) pairs.
pub struct Pix2PixTrainer;

struct Runner {
    g: Model<f32>,
    d: Model<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    lambda: f64,
    updates_g: usize,
    updates_d: usize,
}

impl StepRunner for Runner {
    fn step(&mut self, batch: &Batch, lr: f64, streams: &mut Streams) -> Result<StepOutcome> {
        let mut gt = Tape::new();
        let x = gt.constant(batch.x.clone());
        let y = gt.constant(batch.y.clone());
        let fake = self.g.forward(&mut gt, x, Some(&mut streams.dropout))?;

        // discriminator on real pairs and on detached fakes
        self.d.power_iteration(&mut streams.power)?;
        let mut dt = Tape::new();
        let dx = dt.constant(batch.x.clone());
        let dy = dt.constant(batch.y.clone());
        let df = dt.constant(gt.value(fake).clone());
        let real_pair = dt.concat(&[dx, dy])?;
        let fake_pair = dt.concat(&[dx, df])?;
        let real_logits = self.d.forward(&mut dt, real_pair, None)?;
        let fake_logits = self.d.forward(&mut dt, fake_pair, None)?;
        let loss_d = disc_bce_graph(&mut dt, real_logits, fake_logits)?;
        let loss_d_value = dt.value(loss_d).data()[0] as f64;
        let mut probs = per_image(dt.value(real_logits), sigmoid);
        let n = probs.len();
        probs.extend(per_image(dt.value(fake_logits), sigmoid));
        let truth: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
        let accuracy = disc_accuracy(&probs, &truth)?;
        if loss_d_value.is_finite() {
            self.d.params.accumulate(&dt.backward(loss_d));
            self.opt_d.step(&mut self.d.params, lr);
            self.updates_d += 1;
        }

        // generator against the updated discriminator
        let pair = gt.concat(&[x, fake])?;
        let logits = self.d.forward(&mut gt, pair, None)?;
        let adv = gen_bce_graph(&mut gt, logits);
        let l1 = l1_graph(&mut gt, fake, y)?;
        let total = pix2pix_graph(&mut gt, adv, l1, self.lambda)?;
        let losses = LossReport {
            loss_g_adv: gt.value(adv).data()[0] as f64,
            loss_g_l1: gt.value(l1).data()[0] as f64,
            loss_g_total: gt.value(total).data()[0] as f64,
            loss_d: Some(loss_d_value),
            loss_cycle: None,
            lambda_l1: self.lambda,
            lambda_cycle: None,
        };
        if losses.is_finite() {
            self.g.params.accumulate(&gt.backward(total));
            self.opt_g.step(&mut self.g.params, lr);
            self.updates_g += 1;
        }
        Ok(StepOutcome {
            losses,
            disc_accuracy: Some(accuracy),
        })
    }

    fn generator(&self) -> &Model<f32> {
        &self.g
    }

    fn sn_sigmas(&self) -> Result<Vec<f64>> {
        self.d.normalized_sigmas(SIGMA_PROBE_ITERATIONS)
    }

    fn write(&self, ckpt: &mut Checkpoint) {
        ckpt.add_model("G", &self.g);
        ckpt.add_model("D", &self.d);
    }

    fn updates(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([("G".to_string(), self.updates_g), ("D".to_string(), self.updates_d)])
    }
}

/// Power steps used to measure the normalized spectral norm for telemetry.
pub(crate) const SIGMA_PROBE_ITERATIONS: usize = 50;

impl Trainer for Pix2PixTrainer {
    fn name(&self) -> &'static str {
        "pix2pix"
    }

    fn uses_discriminator(&self) -> bool {
        true
    }

    fn train(&self, data: &TrainData, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
        cfg.validate()?;
        check_data(data, spec)?;
        let d_spec = spec
            .discriminator
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("pix2pix needs a discriminator".into()))?;
        let pair_channels = spec.generator.data_channels() + spec.generator.out_channels;
        if d_spec.in_channels != pair_channels {
            return Err(Error::SpecMismatch(format!(
                "discriminator takes {} channels, pairs have {pair_channels}",
                d_spec.in_channels
            )));
        }
        let g = build_generator(&spec.generator, &mut init_rng(cfg.seed, INIT_STREAM_G))?;
        let d = build_discriminator(d_spec, &mut init_rng(cfg.seed, INIT_STREAM_D))?;
        let mut runner = Runner {
            opt_g: Adam::new(&g.params, cfg.adam()),
            opt_d: Adam::new(&d.params, cfg.adam()),
            g,
            d,
            lambda: cfg.lambda_l1,
            updates_g: 0,
            updates_d: 0,
        };
        let train = prepare(&data.train, &data.normalization, spec.generator.sdf_channel)?;
        run(&mut runner, data, spec, cfg, &train)
    }
}
