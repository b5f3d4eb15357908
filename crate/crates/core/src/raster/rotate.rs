//! Counter-clockwise (as displayed) rotation of square grids on the 45° lattice.
//!
//! Quarter turns are index permutations. The eighth turn resamples in a
//! canonical quadrant so that it commutes bit-exactly with quarter turns,
//! which keeps the comfort pipeline exactly equivariant.

use serde::{Deserialize, Serialize};

use super::grid::FieldGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Nearest,
    #[default]
    Bilinear,
}

/// Index into an `n x n` plane of the grid obtained by `j` clockwise
/// quarter turns of the original.
#[inline]
fn cw_index(n: usize, j: u8, r: usize, c: usize) -> usize {
    let (sr, sc) = match j & 3 {
        0 => (r, c),
        1 => (n - 1 - c, r),
        2 => (n - 1 - r, n - 1 - c),
        _ => (c, n - 1 - r),
    };
    sr * n + sc
}

/// Whether pixel `(r, c)` of an `n x n` grid lies in the disk that survives
/// an eighth turn. Pixels outside it are zero-filled by the rotation.
pub fn inside_rotation_disk(n: usize, r: usize, c: usize) -> bool {
    let ni = n as i64;
    let (a, b) = (2 * c as i64 - (ni - 1), (ni - 1) - 2 * r as i64);
    a * a + b * b <= ni * ni
}

fn quarter_turn(grid: &FieldGrid) -> FieldGrid {
    let n = grid.height();
    let mut out = grid.clone();
    for r in 0..n {
        for c in 0..n {
            for ch in 0..grid.channel_count() {
                out.set(r, c, ch, grid.get(c, n - 1 - r, ch));
            }
        }
    }
    out
}

fn eighth_turn(grid: &FieldGrid, interp: Interp) -> FieldGrid {
    let n = grid.height();
    let cc = grid.channel_count();
    let ni = n as i64;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let planes: Vec<Vec<f32>> = (0..cc).map(|ch| grid.plane(ch)).collect();
    let mut out = grid.clone();
    out.data_mut().iter_mut().for_each(|v| *v = 0.0);
    for r in 0..n {
        for c in 0..n {
            // Doubled coordinates relative to the center, y pointing up.
            let (a0, b0) = (2 * c as i64 - (ni - 1), (ni - 1) - 2 * r as i64);
            if !inside_rotation_disk(n, r, c) {
                continue;
            }
            // Turn clockwise until the point lies in {a > 0, b >= 0}.
            let (mut a, mut b, mut j) = (a0, b0, 0u8);
            if a != 0 || b != 0 {
                while !(a > 0 && b >= 0) {
                    (a, b) = (b, -a);
                    j += 1;
                }
            }
            // Source point: the output point turned clockwise by 45°.
            let (x, y) = ((a + b) as f64 * s, (b - a) as f64 * s);
            let fc = (x + (ni - 1) as f64) * 0.5;
            let fr = ((ni - 1) as f64 - y) * 0.5;
            let max = (n - 1) as f64;
            let (fr, fc) = (fr.clamp(0.0, max), fc.clamp(0.0, max));
            for (ch, plane) in planes.iter().enumerate() {
                let at = |rr: usize, cc2: usize| plane[cw_index(n, j, rr, cc2)];
                let v = match interp {
                    Interp::Nearest => at(fr.round() as usize, fc.round() as usize),
                    Interp::Bilinear => {
                        let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
                        let (r1, c1) = ((r0 + 1).min(n - 1), (c0 + 1).min(n - 1));
                        let (tr, tc) = (fr - r0 as f64, fc - c0 as f64);
                        let top = at(r0, c0) as f64 * (1.0 - tc) + at(r0, c1) as f64 * tc;
                        let bot = at(r1, c0) as f64 * (1.0 - tc) + at(r1, c1) as f64 * tc;
                        (top * (1.0 - tr) + bot * tr) as f32
                    }
                };
                out.set(r, c, ch, v);
            }
        }
    }
    out
}

/// Rotate a square grid counter-clockwise by `angle` degrees, any multiple
/// of 45 (negative angles turn clockwise). Quarter turns are lossless;
/// an odd multiple of 45° resamples with `interp` and zero-fills pixels
/// outside the inscribed circle.
pub fn rotate_field(grid: &FieldGrid, angle: i64, interp: Interp) -> Result<FieldGrid> {
    if angle % 45 != 0 {
        return Err(Error::UnsupportedAngle(angle));
    }
    let steps = (angle / 45).rem_euclid(8);
    if steps == 0 {
        return Ok(grid.clone());
    }
    if grid.height() != grid.width() {
        return Err(Error::InvalidGrid(format!(
            "rotation needs a square grid, got {}x{}",
            grid.height(),
            grid.width()
        )));
    }
    let mut out = if steps % 2 == 1 {
        eighth_turn(grid, interp)
    } else {
        grid.clone()
    };
    for _ in 0..steps / 2 {
        out = quarter_turn(&out);
    }
    Ok(out)
}
