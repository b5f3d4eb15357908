use std::collections::BTreeMap;

use windflow_tensor::{Adam, Tape};

use super::{check_data, prepare, run, Batch, StepOutcome, StepRunner, Streams, TrainConfig, TrainData, TrainOutcome, Trainer, INIT_STREAM_G};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nets::{build_generator, init_rng, Model, ModelSpec};
use crate::objectives::{l1_graph, LossReport};

/// Supervised generator training on the L1 loss alone.
pub struct UnetTrainer;

struct Runner {
    g: Model<f32>,
    opt: Adam<f32>,
    updates: usize,
    lambda_l1: f64,
}

impl StepRunner for Runner {
    fn step(&mut self, batch: &Batch, lr: f64, streams: &mut Streams) -> Result<StepOutcome> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.x.clone());
        let y = tape.constant(batch.y.clone());
        let pred = self.g.forward(&mut tape, x, Some(&mut streams.dropout))?;
        let loss = l1_graph(&mut tape, pred, y)?;
        let l1 = tape.value(loss).data()[0] as f64;
        if l1.is_finite() {
            self.g.params.accumulate(&tape.backward(loss));
            self.opt.step(&mut self.g.params, lr);
            self.updates += 1;
        }
        Ok(StepOutcome {
            losses: LossReport {
                loss_g_adv: 0.0,
                loss_g_l1: l1,
                loss_g_total: l1,
                loss_d: None,
                loss_cycle: None,
                lambda_l1: self.lambda_l1,
                lambda_cycle: None,
            },
            disc_accuracy: None,
        })
    }

    fn generator(&self) -> &Model<f32> {
        &self.g
    }

    fn sn_sigmas(&self) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn write(&self, ckpt: &mut Checkpoint) {
        ckpt.add_model("G", &self.g);
    }

    fn updates(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([("G".to_string(), self.updates)])
    }
}

impl Trainer for UnetTrainer {
    fn name(&self) -> &'static str {
        "unet"
    }

    fn uses_discriminator(&self) -> bool {
        false
    }

    fn train(&self, data: &TrainData, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
        cfg.validate()?;
        if spec.discriminator.is_some() {
            return Err(Error::InvalidConfig("unet training has no discriminator".into()));
        }
        check_data(data, spec)?;
        let g = build_generator(&spec.generator, &mut init_rng(cfg.seed, INIT_STREAM_G))?;
        let mut runner = Runner {
            opt: Adam::new(&g.params, cfg.adam()),
            g,
            updates: 0,
            lambda_l1: 1.0,
        };
        let train = prepare(&data.train, &data.normalization, spec.generator.sdf_channel)?;
        run(&mut runner, data, spec, cfg, &train)
    }
}
