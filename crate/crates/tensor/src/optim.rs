use crate::float::Float;
use crate::params::Params;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; the learning rate is supplied per step.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &Params<T>, cfg: AdamConfig) -> Self {
        let zeros: Vec<_> = params.ids().map(|id| Tensor::zeros(params.value(id).shape())).collect();
        Self {
            cfg,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, params: &mut Params<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (tb1, tb2) = (T::lit(b1), T::lit(b2));
        let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
        let step_size = T::lit(lr / c1);
        let c2_sqrt = T::lit(c2.sqrt());
        let eps = T::lit(self.cfg.eps);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let grad = params.grad(id).data().to_vec();
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let w = params.value_mut(id).data_mut();
            for i in 0..w.len() {
                let g = grad[i];
                m[i] = tb1 * m[i] + ob1 * g;
                v[i] = tb2 * v[i] + ob2 * g * g;
                let denom = v[i].sqrt() / c2_sqrt + eps;
                w[i] -= step_size * m[i] / denom;
            }
        }
        params.zero_grad();
    }
}
