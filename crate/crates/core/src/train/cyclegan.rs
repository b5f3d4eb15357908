use std::collections::BTreeMap;

use windflow_tensor::{Adam, Tape, Tensor};

use super::pix2pix::SIGMA_PROBE_ITERATIONS;
use super::{
    check_data, disc_accuracy, per_image, prepare, run, stack, Batch, ImagePool, StepOutcome, StepRunner, Streams,
    TrainConfig, TrainData, TrainOutcome, Trainer, INIT_STREAM_D, INIT_STREAM_DY, INIT_STREAM_F, INIT_STREAM_G,
};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nets::{build_discriminator, build_generator, init_rng, DiscriminatorSpec, GeneratorSpec, Model, ModelSpec};
use crate::objectives::{disc_lsgan_graph, l1_graph, LossReport};

/// Unpaired translation with two generators, two least-squares
/// discriminators and cycle consistency.
pub struct CycleGanTrainer;

/// Inverse generator `F: flow -> geometry`, the geometry discriminator and
/// the flow discriminator, derived from a spec whose generator maps
/// geometry to flow and whose discriminator judges flow.
pub fn cycle_networks(spec: &ModelSpec) -> Result<(GeneratorSpec, DiscriminatorSpec, DiscriminatorSpec)> {
    let d = spec
        .discriminator
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("cyclegan needs a discriminator".into()))?;
    let g = &spec.generator;
    if d.in_channels != g.out_channels {
        return Err(Error::SpecMismatch(format!(
            "flow discriminator takes {} channels, generator emits {}",
            d.in_channels, g.out_channels
        )));
    }
    let f = GeneratorSpec {
        in_channels: g.out_channels,
        out_channels: g.data_channels(),
        sdf_channel: false,
        ..g.clone()
    };
    let dx = DiscriminatorSpec {
        in_channels: g.data_channels(),
        ..d.clone()
    };
    Ok((f, dx, d.clone()))
}

struct Runner {
    g: Model<f32>,
    f: Model<f32>,
    dx: Model<f32>,
    dy: Model<f32>,
    opt_g: Adam<f32>,
    opt_f: Adam<f32>,
    opt_dx: Adam<f32>,
    opt_dy: Adam<f32>,
    pool_x: ImagePool<Tensor<f32>>,
    pool_y: ImagePool<Tensor<f32>>,
    lambda: f64,
    updates: BTreeMap<String, usize>,
}

fn split(t: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let n = t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = 1;
    let per = t.numel() / n;
    t.data().chunks(per).map(|c| Ok(Tensor::from_vec(&shape, c.to_vec())?)).collect()
}

fn bump(updates: &mut BTreeMap<String, usize>, key: &str) {
    *updates.entry(key.to_string()).or_default() += 1;
}

/// One least-squares discriminator update on real data and pooled fakes.
/// Returns the loss and the per-image mean outputs for real then fake.
fn disc_step(
    d: &mut Model<f32>,
    opt: &mut Adam<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    lr: f64,
    streams: &mut Streams,
) -> Result<(f64, Vec<Vec<f64>>, bool)> {
    d.power_iteration(&mut streams.power)?;
    let mut tape = Tape::new();
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let ro = d.forward(&mut tape, r, None)?;
    let fo = d.forward(&mut tape, f, None)?;
    let loss = disc_lsgan_graph(&mut tape, ro, fo)?;
    let value = tape.value(loss).data()[0] as f64;
    let mut outputs = per_image(tape.value(ro), |v| v);
    outputs.extend(per_image(tape.value(fo), |v| v));
    let stepped = value.is_finite();
    if stepped {
        d.params.accumulate(&tape.backward(loss));
        opt.step(&mut d.params, lr);
    }
    Ok((value, outputs, stepped))
}

impl StepRunner for Runner {
    fn step(&mut self, batch: &Batch, lr: f64, streams: &mut Streams) -> Result<StepOutcome> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.x.clone());
        let y = tape.constant(batch.y.clone());
        let fake_y = self.g.forward(&mut tape, x, Some(&mut streams.dropout))?;
        let rec_x = self.f.forward(&mut tape, fake_y, Some(&mut streams.dropout))?;
        let fake_x = self.f.forward(&mut tape, y, Some(&mut streams.dropout))?;
        let rec_y = self.g.forward(&mut tape, fake_x, Some(&mut streams.dropout))?;

        let judged_y = self.dy.forward(&mut tape, fake_y, None)?;
        let judged_x = self.dx.forward(&mut tape, fake_x, None)?;
        let adv_y = tape.mse_to_const(judged_y, 1.0);
        let adv_x = tape.mse_to_const(judged_x, 1.0);
        let adv = tape.add(adv_y, adv_x)?;
        let cyc_x = l1_graph(&mut tape, rec_x, x)?;
        let cyc_y = l1_graph(&mut tape, rec_y, y)?;
        let cyc_sum = tape.add(cyc_x, cyc_y)?;
        let cyc = tape.scale(cyc_sum, self.lambda as f32);
        let total = tape.add(adv, cyc)?;
        let supervised = l1_graph(&mut tape, fake_y, y)?;

        let scalar = |v| tape.value(v).data()[0] as f64;
        let (adv_v, cyc_v, total_v, sup_v) = (scalar(adv), scalar(cyc), scalar(total), scalar(supervised));
        if total_v.is_finite() {
            let grads = tape.backward(total);
            self.g.params.accumulate(&grads);
            self.f.params.accumulate(&grads);
            self.opt_g.step(&mut self.g.params, lr);
            self.opt_f.step(&mut self.f.params, lr);
            bump(&mut self.updates, "G");
            bump(&mut self.updates, "F");
        }

        let pooled_y: Vec<Tensor<f32>> =
            split(tape.value(fake_y))?.into_iter().map(|t| self.pool_y.query(t, &mut streams.pool)).collect();
        let pooled_x: Vec<Tensor<f32>> =
            split(tape.value(fake_x))?.into_iter().map(|t| self.pool_x.query(t, &mut streams.pool)).collect();
        let fake_y_batch = stack(&pooled_y.iter().collect::<Vec<_>>())?;
        let fake_x_batch = stack(&pooled_x.iter().collect::<Vec<_>>())?;

        let (loss_dy, outputs, stepped) =
            disc_step(&mut self.dy, &mut self.opt_dy, &batch.y, &fake_y_batch, lr, streams)?;
        if stepped {
            bump(&mut self.updates, "DY");
        }
        let (loss_dx, _, stepped) = disc_step(&mut self.dx, &mut self.opt_dx, &batch.x, &fake_x_batch, lr, streams)?;
        if stepped {
            bump(&mut self.updates, "DX");
        }
        let n = outputs.len() / 2;
        let truth: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
        Ok(StepOutcome {
            losses: LossReport {
                loss_g_adv: adv_v,
                loss_g_l1: sup_v,
                loss_g_total: total_v,
                loss_d: Some(0.5 * (loss_dx + loss_dy)),
                loss_cycle: Some(cyc_v),
                lambda_l1: 0.0,
                lambda_cycle: Some(self.lambda),
            },
            disc_accuracy: Some(disc_accuracy(&outputs, &truth)?),
        })
    }

    fn generator(&self) -> &Model<f32> {
        &self.g
    }

    fn sn_sigmas(&self) -> Result<Vec<f64>> {
        let mut s = self.dx.normalized_sigmas(SIGMA_PROBE_ITERATIONS)?;
        s.extend(self.dy.normalized_sigmas(SIGMA_PROBE_ITERATIONS)?);
        Ok(s)
    }

    fn write(&self, ckpt: &mut Checkpoint) {
        ckpt.add_model("G", &self.g);
        ckpt.add_model("F", &self.f);
        ckpt.add_model("DX", &self.dx);
        ckpt.add_model("DY", &self.dy);
    }

    fn updates(&self) -> BTreeMap<String, usize> {
        self.updates.clone()
    }
}

impl Trainer for CycleGanTrainer {
    fn name(&self) -> &'static str {
        "cyclegan"
    }

    fn uses_discriminator(&self) -> bool {
        true
    }

    fn train(&self, data: &TrainData, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
        cfg.validate()?;
        check_data(data, spec)?;
        let (f_spec, dx_spec, dy_spec) = cycle_networks(spec)?;
        let g = build_generator(&spec.generator, &mut init_rng(cfg.seed, INIT_STREAM_G))?;
        let f = build_generator(&f_spec, &mut init_rng(cfg.seed, INIT_STREAM_F))?;
        let dx = build_discriminator(&dx_spec, &mut init_rng(cfg.seed, INIT_STREAM_D))?;
        let dy = build_discriminator(&dy_spec, &mut init_rng(cfg.seed, INIT_STREAM_DY))?;
        let mut runner = Runner {
            opt_g: Adam::new(&g.params, cfg.adam()),
            opt_f: Adam::new(&f.params, cfg.adam()),
            opt_dx: Adam::new(&dx.params, cfg.adam()),
            opt_dy: Adam::new(&dy.params, cfg.adam()),
            g,
            f,
            dx,
            dy,
            pool_x: ImagePool::new(cfg.pool_size),
            pool_y: ImagePool::new(cfg.pool_size),
            lambda: cfg.lambda_cycle,
            updates: ["G", "F", "DX", "DY"].into_iter().map(|k| (k.to_string(), 0)).collect(),
        };
        let train = prepare(&data.train, &data.normalization, spec.generator.sdf_channel)?;
        run(&mut runner, data, spec, cfg, &train)
    }
}
