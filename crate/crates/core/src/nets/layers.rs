use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use windflow_tensor::{Float, ParamId, Params, Tape, Tensor, Var};

use crate::error::Result;

/// Standard deviation of the Gaussian weight init.
pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

/// Left/right singular vector estimates of one spectrally normalized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SnVectors<T> {
    /// Name of the weight parameter.
    pub weight: String,
    pub u: Vec<T>,
    pub v: Vec<T>,
}

/// State threaded through one forward pass.
pub struct Forward<'a, T: Float> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a Params<T>,
    pub sn: &'a [SnVectors<T>],
    /// Dropout source; `None` runs in evaluation mode.
    pub dropout: Option<&'a mut ChaCha8Rng>,
}

impl<T: Float> Forward<'_, T> {
    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }

    pub fn training(&self) -> bool {
        self.dropout.is_some()
    }
}

/// A differentiable block. Forward passes only read parameters, so a built
/// model can serve concurrent requests.
pub trait Module<T: Float>: Send + Sync {
    fn forward(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var>;
}

/// Collects parameters, SN state and the init stream while a network is built.
pub struct Builder<'a, T: Float> {
    pub params: &'a mut Params<T>,
    pub sn: &'a mut Vec<SnVectors<T>>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Float> Builder<'_, T> {
    pub fn gaussian(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let normal = Normal::new(0.0, std).expect("valid std");
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
    }

    fn unit_vector(&mut self, n: usize) -> Vec<T> {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *self.rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= norm);
        v.into_iter().map(T::lit).collect()
    }

    /// Convolution weight `[cout, cin, k, k]` with optional bias.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Conv {
        let init = self.gaussian(&[cout, cin, k, k], INIT_STD);
        let w = self.params.add(format!("{name}.weight"), init);
        let b = bias.then(|| self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Conv { w, b, stride, pad, sn: None }
    }

    /// Like [`Builder::conv`] but wrapped in spectral normalization.
    pub fn sn_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Conv {
        let mut conv = self.conv(name, cin, cout, k, stride, pad, bias);
        let u = self.unit_vector(cout);
        let v = self.unit_vector(cin * k * k);
        conv.sn = Some(self.sn.len());
        self.sn.push(SnVectors {
            weight: format!("{name}.weight"),
            u,
            v,
        });
        conv
    }

    /// Transposed convolution weight `[cin, cout, k, k]` with bias.
    pub fn conv_t(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, output_pad: usize) -> ConvT {
        let init = self.gaussian(&[cin, cout, k, k], INIT_STD);
        let w = self.params.add(format!("{name}.weight"), init);
        let b = self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        ConvT { w, b, stride, pad, output_pad }
    }

    pub fn scalar(&mut self, name: &str, value: f64) -> ParamId {
        self.params.add(name.to_string(), Tensor::full(&[1, 1, 1, 1], T::lit(value)))
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    /// Index into the model's SN vectors when spectrally normalized.
    pub sn: Option<usize>,
}

impl Conv {
    pub fn apply<T: Float>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut w = cx.param(self.w);
        if let Some(i) = self.sn {
            let state = &cx.sn[i];
            w = cx.tape.spectral_norm(w, &state.u, &state.v)?;
        }
        let b = self.b.map(|b| cx.param(b));
        Ok(cx.tape.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvT {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvT {
    pub fn apply<T: Float>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.w);
        let b = cx.param(self.b);
        Ok(cx.tape.conv_transpose2d(x, w, Some(b), self.stride, self.pad, self.output_pad)?)
    }
}

pub fn instance_norm<T: Float>(cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
    Ok(cx.tape.instance_norm(x, T::lit(NORM_EPS))?)
}

pub fn leaky<T: Float>(cx: &mut Forward<'_, T>, x: Var) -> Var {
    cx.tape.leaky_relu(x, T::lit(LEAKY_SLOPE))
}

/// Inverted dropout; the identity in evaluation mode or when `p == 0`.
pub fn dropout<T: Float>(cx: &mut Forward<'_, T>, x: Var, p: f64) -> Result<Var> {
    let Some(rng) = cx.dropout.as_deref_mut() else {
        return Ok(x);
    };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let shape = cx.tape.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < p { T::zero() } else { keep });
    let m = cx.tape.constant(mask);
    Ok(cx.tape.mul(x, m)?)
}

/// Append normalized row and column coordinate channels.
pub fn add_coords<T: Float>(cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
    let [n, _, h, w] = cx.tape.value(x).dims4()?;
    let coords = crate::raster::coord_channels(h, w).to_tensor::<T>();
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n {
        data.extend_from_slice(coords.data());
    }
    let c = cx.tape.constant(Tensor::from_vec(&[n, 2, h, w], data)?);
    Ok(cx.tape.concat(&[x, c])?)
}
