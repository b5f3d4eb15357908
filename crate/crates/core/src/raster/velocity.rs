use super::grid::FieldGrid;
use crate::error::{Error, Result};

const RANGE_TOL: f64 = 1e-6;

/// Replace every value by the center of its bin in a uniform partition of
/// `[0, v_max]` into `n_bins` intervals. Values within 1e-6 outside the
/// range are clamped; anything further out is an error.
pub fn bucketize(flow: &FieldGrid, v_max: f64, n_bins: usize) -> Result<FieldGrid> {
    if n_bins < 2 {
        return Err(Error::InvalidConfig(format!("n_bins {n_bins} < 2")));
    }
    if !(v_max > 0.0 && v_max.is_finite()) {
        return Err(Error::InvalidConfig(format!("v_max {v_max} must be positive")));
    }
    let width = v_max / n_bins as f64;
    let mut out = flow.clone();
    for v in out.data_mut() {
        let x = *v as f64;
        if !(x >= -RANGE_TOL && x <= v_max + RANGE_TOL) {
            return Err(Error::OutOfRange { value: x, v_max });
        }
        let bin = ((x.clamp(0.0, v_max) / width).floor() as usize).min(n_bins - 1);
        *v = ((bin as f64 + 0.5) * width) as f32;
    }
    Ok(out)
}

/// Affine map of velocities from `[0, v_max]` onto `[-1, 1]`.
pub fn normalize(grid: &FieldGrid, v_max: f64) -> FieldGrid {
    let mut out = grid.clone();
    for v in out.data_mut() {
        *v = (2.0 * *v as f64 / v_max - 1.0) as f32;
    }
    out
}

/// Inverse of [`normalize`].
pub fn denormalize(grid: &FieldGrid, v_max: f64) -> FieldGrid {
    let mut out = grid.clone();
    for v in out.data_mut() {
        *v = ((*v as f64 + 1.0) * 0.5 * v_max) as f32;
    }
    out
}
