//! Power-iteration spectral normalization.

use windflow_tensor::Float;

use crate::error::{Error, Result};

/// Result of one power-iteration step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStep<T> {
    /// `W / sigma`, same layout as the input.
    pub normalized: Vec<T>,
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub sigma: T,
}

fn normalize<T: Float>(x: &mut [T]) -> Result<()> {
    let norm = x.iter().map(|&a| a * a).sum::<T>().sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::DegenerateWeight);
    }
    x.iter_mut().for_each(|a| *a /= norm);
    Ok(())
}

/// One power step on the `rows x cols` row-major matrix `w`:
/// `v = W^T u / |W^T u|`, `u' = W v / |W v|`, `sigma = u'^T W v`.
pub fn power_step<T: Float>(w: &[T], rows: usize, cols: usize, u: &[T]) -> Result<(Vec<T>, Vec<T>, T)> {
    if w.len() != rows * cols || u.len() != rows {
        return Err(Error::Shape(format!(
            "power step on {rows}x{cols} with {} weights and |u| = {}",
            w.len(),
            u.len()
        )));
    }
    let mut v = vec![T::zero(); cols];
    for r in 0..rows {
        let ur = u[r];
        for (vc, &wrc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *vc += wrc * ur;
        }
    }
    normalize(&mut v)?;
    let wv: Vec<T> = (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(&a, &b)| a * b).sum())
        .collect();
    let mut u_next = wv.clone();
    normalize(&mut u_next)?;
    let sigma = u_next.iter().zip(&wv).map(|(&a, &b)| a * b).sum();
    Ok((u_next, v, sigma))
}

/// One step of spectral normalization: returns `W / sigma` along with the
/// updated singular-vector estimates. Fails with `DegenerateWeight` when
/// `W^T u` vanishes; callers re-randomize `u` and retry.
pub fn spectral_normalize<T: Float>(w: &[T], rows: usize, cols: usize, u: &[T]) -> Result<SpectralStep<T>> {
    let (u, v, sigma) = power_step(w, rows, cols, u)?;
    Ok(SpectralStep {
        normalized: w.iter().map(|&x| x / sigma).collect(),
        u,
        v,
        sigma,
    })
}

/// Iterate [`spectral_normalize`] `iterations` times from `u`.
pub fn converge<T: Float>(w: &[T], rows: usize, cols: usize, u: &[T], iterations: usize) -> Result<SpectralStep<T>> {
    let mut step = spectral_normalize(w, rows, cols, u)?;
    for _ in 1..iterations {
        step = spectral_normalize(w, rows, cols, &step.u)?;
    }
    Ok(step)
}
