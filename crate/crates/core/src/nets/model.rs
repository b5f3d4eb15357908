use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use windflow_tensor::{Float, Params, Tape, Tensor, Var};

use super::attention::AttentionRegistry;
use super::layers::{Builder, Forward, Module, SnVectors};
use super::patchgan::PatchGan;
use super::resnet::ResNet9;
use super::spec::{DiscriminatorSpec, GeneratorFamily, GeneratorSpec};
use super::spectral::power_step;
use super::unet::UNet;
use crate::error::{Error, Result};

/// Built network: parameters, spectral-norm state and the forward graph.
pub struct Model<T: Float> {
    pub params: Params<T>,
    pub sn: Vec<SnVectors<T>>,
    body: Box<dyn Module<T>>,
}

impl<T: Float> Model<T> {
    pub fn empty() -> Self {
        struct Identity;
        impl<T: Float> Module<T> for Identity {
            fn forward(&self, _: &mut Forward<'_, T>, x: Var) -> Result<Var> {
                Ok(x)
            }
        }
        Self {
            params: Params::new(),
            sn: Vec::new(),
            body: Box::new(Identity),
        }
    }

    /// Record the forward pass on `tape`. A dropout stream switches on
    /// training behaviour.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let mut cx = Forward {
            tape,
            params: &self.params,
            sn: &self.sn,
            dropout,
        };
        self.body.forward(&mut cx, x)
    }

    /// Evaluation-mode inference on a `[N, C, H, W]` batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, None)?;
        Ok(tape.value(out).clone())
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Advance every spectral-norm layer by one power-iteration step. A
    /// vanishing `W^T u` re-randomizes `u` from `rng`.
    pub fn power_iteration(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        for state in &mut self.sn {
            let id = self
                .params
                .find(&state.weight)
                .ok_or_else(|| Error::Shape(format!("missing SN weight {}", state.weight)))?;
            let w = self.params.value(id);
            let rows = w.shape()[0];
            let cols = w.numel() / rows;
            let (u, v) = match power_step(w.data(), rows, cols, &state.u) {
                Ok((u, v, _)) => (u, v),
                Err(Error::DegenerateWeight) => {
                    use rand_distr::{Distribution, StandardNormal};
                    let fresh: Vec<T> = (0..rows).map(|_| T::lit(StandardNormal.sample(&mut *rng))).collect();
                    let (u, v, _) = power_step(w.data(), rows, cols, &fresh)?;
                    (u, v)
                }
                Err(e) => return Err(e),
            };
            state.u = u;
            state.v = v;
        }
        Ok(())
    }

    /// For each SN layer, the largest singular value of the normalized
    /// weight `W / sigma_hat`, estimated by `iterations` further power steps
    /// that leave the stored state untouched.
    pub fn normalized_sigmas(&self, iterations: usize) -> Result<Vec<f64>> {
        self.sn
            .iter()
            .map(|state| {
                let id = self.params.find(&state.weight).expect("SN weight registered");
                let w = self.params.value(id);
                let rows = w.shape()[0];
                let cols = w.numel() / rows;
                let data: Vec<f64> = w.data().iter().map(|x| x.as_f64()).collect();
                let u0: Vec<f64> = state.u.iter().map(|x| x.as_f64()).collect();
                let v0: Vec<f64> = state.v.iter().map(|x| x.as_f64()).collect();
                let sigma_hat: f64 = (0..rows)
                    .map(|r| u0[r] * data[r * cols..(r + 1) * cols].iter().zip(&v0).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                let mut u = u0;
                let mut sigma = 0.0;
                for _ in 0..iterations.max(1) {
                    let (nu, _, s) = power_step(&data, rows, cols, &u)?;
                    u = nu;
                    sigma = s;
                }
                Ok(sigma / sigma_hat)
            })
            .collect()
    }
}

/// Builds one generator family.
pub trait GeneratorKind<T: Float>: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, spec: &GeneratorSpec, b: &mut Builder<'_, T>, attention: &AttentionRegistry<T>) -> Result<Box<dyn Module<T>>>;
}

struct UnetKind;
struct Resnet9Kind;

impl<T: Float> GeneratorKind<T> for UnetKind {
    fn name(&self) -> &'static str {
        GeneratorFamily::Unet.name()
    }
    fn build(&self, spec: &GeneratorSpec, b: &mut Builder<'_, T>, attention: &AttentionRegistry<T>) -> Result<Box<dyn Module<T>>> {
        Ok(Box::new(UNet::new(spec, b, attention)?))
    }
}

impl<T: Float> GeneratorKind<T> for Resnet9Kind {
    fn name(&self) -> &'static str {
        GeneratorFamily::Resnet9.name()
    }
    fn build(&self, spec: &GeneratorSpec, b: &mut Builder<'_, T>, _: &AttentionRegistry<T>) -> Result<Box<dyn Module<T>>> {
        Ok(Box::new(ResNet9::new(spec, b)))
    }
}

pub struct GeneratorRegistry<T: Float> {
    kinds: Vec<Box<dyn GeneratorKind<T>>>,
}

impl<T: Float> GeneratorRegistry<T> {
    pub fn builtin() -> Self {
        Self {
            kinds: vec![Box::new(UnetKind), Box::new(Resnet9Kind)],
        }
    }

    pub fn register(&mut self, kind: Box<dyn GeneratorKind<T>>) {
        self.kinds.retain(|k| k.name() != kind.name());
        self.kinds.push(kind);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kinds.iter().map(|k| k.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn GeneratorKind<T>> {
        self.kinds
            .iter()
            .find(|k| k.name() == name)
            .map(|k| k.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: "generator family",
                name: name.to_string(),
            })
    }
}

/// Seeded init stream: `stream` separates networks sharing a root seed.
pub fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn build_generator<T: Float>(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Model<T>> {
    spec.validate()?;
    let mut params = Params::new();
    let mut sn = Vec::new();
    let body = {
        let mut b = Builder {
            params: &mut params,
            sn: &mut sn,
            rng,
        };
        GeneratorRegistry::builtin()
            .get(spec.family.name())?
            .build(spec, &mut b, &AttentionRegistry::builtin())?
    };
    Ok(Model { params, sn, body })
}

pub fn build_discriminator<T: Float>(spec: &DiscriminatorSpec, rng: &mut ChaCha8Rng) -> Result<Model<T>> {
    spec.validate()?;
    let mut params = Params::new();
    let mut sn = Vec::new();
    let body: Box<dyn Module<T>> = {
        let mut b = Builder {
            params: &mut params,
            sn: &mut sn,
            rng,
        };
        Box::new(PatchGan::new(spec, &mut b, &AttentionRegistry::builtin())?)
    };
    Ok(Model { params, sn, body })
}

/// Exact number of trainable scalars.
pub fn param_count<T: Float>(model: &Model<T>) -> usize {
    model.param_count()
}
