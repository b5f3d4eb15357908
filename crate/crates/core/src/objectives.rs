//! Training losses.
//!
//! Each loss comes twice: a plain function over value slices, used for
//! reporting and fixtures, and a `*_graph` builder that records the same
//! quantity on a tape for backpropagation.

use serde::{Deserialize, Serialize};
use windflow_tensor::{Float, Tape, Var};

use crate::error::{Error, Result};

/// Default weight of the L1 term in the conditional GAN objective.
pub const LAMBDA_L1: f64 = 100.0;
/// Default weight of the cycle-consistency term.
pub const LAMBDA_CYCLE: f64 = 10.0;
/// Factor applied to the averaged discriminator loss.
pub const DISC_LOSS_FACTOR: f64 = 0.5;

/// Per-step loss values.
///
/// `loss_g_l1` is the supervised L1 between prediction and target. It is part
/// of the objective for pix2pix and unet; for cyclegan it is tracked only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_g_adv: f64,
    pub loss_g_l1: f64,
    pub loss_g_total: f64,
    pub loss_d: Option<f64>,
    pub loss_cycle: Option<f64>,
    pub lambda_l1: f64,
    pub lambda_cycle: Option<f64>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.loss_g_adv, self.loss_g_l1, self.loss_g_total]
            .into_iter()
            .chain(self.loss_d)
            .chain(self.loss_cycle)
            .all(f64::is_finite)
    }
}

fn same_len(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Shape(format!("{op}: lengths {a} and {b}")));
    }
    Ok(())
}

fn bce_logits(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

fn mean_of<T: Float>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    xs.iter().map(|x| f(x.as_f64())).sum::<f64>() / xs.len() as f64
}

/// Conditional adversarial losses from patch logits.
///
/// Returns `(loss_d, loss_g_adv)`. `loss_d` is the mean of the real-labelled
/// and fake-labelled cross-entropies, halved. `loss_g_adv` is the
/// non-saturating generator term, fake patches labelled real.
pub fn adv_loss<T: Float>(real_logits: &[T], fake_logits: &[T]) -> Result<(f64, f64)> {
    same_len("adv_loss", real_logits.len(), fake_logits.len())?;
    let real = mean_of(real_logits, |z| bce_logits(z, 1.0));
    let fake = mean_of(fake_logits, |z| bce_logits(z, 0.0));
    let g = mean_of(fake_logits, |z| bce_logits(z, 1.0));
    Ok((DISC_LOSS_FACTOR * 0.5 * (real + fake), g))
}

/// Mean absolute difference.
pub fn l1_loss<T: Float>(pred: &[T], target: &[T]) -> Result<f64> {
    same_len("l1_loss", pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p.as_f64() - t.as_f64()).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn pix2pix_objective(adv: f64, l1: f64, lambda: f64) -> f64 {
    adv + lambda * l1
}

/// Mean squared distance of patch outputs to a constant label.
pub fn lsgan_loss<T: Float>(d_out: &[T], target: f64) -> Result<f64> {
    if d_out.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(mean_of(d_out, |z| (z - target) * (z - target)))
}

/// Weighted sum of the forward and backward cycle reconstruction errors.
pub fn cycle_loss<T: Float>(x: &[T], x_cycled: &[T], y: &[T], y_cycled: &[T], lambda: f64) -> Result<f64> {
    Ok(lambda * (l1_loss(x_cycled, x)? + l1_loss(y_cycled, y)?))
}

/// Halved discriminator cross-entropy on the tape.
pub fn disc_bce_graph<T: Float>(tape: &mut Tape<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    check_same_shape(tape, "disc_bce", real_logits, fake_logits)?;
    let r = tape.bce_with_logits(real_logits, T::one());
    let f = tape.bce_with_logits(fake_logits, T::zero());
    let sum = tape.add(r, f)?;
    Ok(tape.scale(sum, T::lit(DISC_LOSS_FACTOR * 0.5)))
}

/// Non-saturating generator term on the tape.
pub fn gen_bce_graph<T: Float>(tape: &mut Tape<T>, fake_logits: Var) -> Var {
    tape.bce_with_logits(fake_logits, T::one())
}

/// Halved least-squares discriminator loss on the tape.
pub fn disc_lsgan_graph<T: Float>(tape: &mut Tape<T>, real_out: Var, fake_out: Var) -> Result<Var> {
    check_same_shape(tape, "disc_lsgan", real_out, fake_out)?;
    let r = tape.mse_to_const(real_out, T::one());
    let f = tape.mse_to_const(fake_out, T::zero());
    let sum = tape.add(r, f)?;
    Ok(tape.scale(sum, T::lit(DISC_LOSS_FACTOR * 0.5)))
}

pub fn l1_graph<T: Float>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    check_same_shape(tape, "l1", pred, target)?;
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// `adv + lambda * l1` on the tape.
pub fn pix2pix_graph<T: Float>(tape: &mut Tape<T>, adv: Var, l1: Var, lambda: f64) -> Result<Var> {
    let weighted = tape.scale(l1, T::lit(lambda));
    Ok(tape.add(adv, weighted)?)
}

fn check_same_shape<T: Float>(tape: &Tape<T>, op: &str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use windflow_tensor::Tensor;

    #[test]
    fn graph_and_value_forms_agree() {
        let real = [0.3f64, -1.2, 2.0, 0.0];
        let fake = [-0.7f64, 0.4, 1.1, -3.0];
        let mut tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], real.to_vec()).unwrap());
        let f = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], fake.to_vec()).unwrap());
        let (d, g) = adv_loss(&real, &fake).unwrap();
        let dv = disc_bce_graph(&mut tape, r, f).unwrap();
        let gv = gen_bce_graph(&mut tape, f);
        assert!((tape.value(dv).data()[0] - d).abs() < 1e-12);
        assert!((tape.value(gv).data()[0] - g).abs() < 1e-12);
        let l1 = l1_graph(&mut tape, r, f).unwrap();
        assert!((tape.value(l1).data()[0] - l1_loss(&real, &fake).unwrap()).abs() < 1e-12);
        let ls = disc_lsgan_graph(&mut tape, r, f).unwrap();
        let expect = 0.25 * (lsgan_loss(&real, 1.0).unwrap() + lsgan_loss(&fake, 0.0).unwrap());
        assert!((tape.value(ls).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn mismatched_shapes_fail() {
        assert!(l1_loss(&[1.0f32], &[1.0, 2.0]).is_err());
        assert!(adv_loss::<f32>(&[], &[]).is_err());
    }
}
