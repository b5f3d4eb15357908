//! D2Q9 BGK lattice-Boltzmann channel solver.
//!
//! Columns run along the flow. The left column is held at equilibrium with
//! the inlet velocity, the right column copies its upstream neighbour, the
//! top and bottom rows reflect specularly (free slip) and solid cells use
//! half-way bounce-back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EX: [i64; 9] = [0, 1, 0, -1, 0, 1, -1, -1, 1];
// Row offsets; positive points down the raster.
const EY: [i64; 9] = [0, 0, -1, 0, 1, -1, -1, 1, 1];
const W: [f64; 9] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];
const OPPOSITE: [usize; 9] = [0, 3, 4, 1, 2, 7, 8, 5, 6];
const MIRROR_Y: [usize; 9] = [0, 1, 4, 3, 2, 8, 7, 6, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Raster side used by dataset generation.
    pub n: usize,
    pub tau: f64,
    /// Inlet speed in lattice units.
    pub u_in: f64,
    pub max_steps: usize,
    /// Relative change of the velocity field per check interval.
    pub tolerance: f64,
    /// Physical speed (m/s) the inlet speed maps to.
    pub v_ref: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 128,
            tau: 0.8,
            u_in: 0.08,
            max_steps: 20_000,
            tolerance: 1e-6,
            v_ref: 5.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.5) {
            return Err(Error::InvalidConfig(format!("tau {} must exceed 0.5", self.tau)));
        }
        if !(self.u_in > 0.0 && self.u_in < 0.2) {
            return Err(Error::InvalidConfig(format!("u_in {} outside (0, 0.2)", self.u_in)));
        }
        if !(self.tolerance > 0.0) || !(self.v_ref > 0.0) || self.n < 8 {
            return Err(Error::InvalidConfig("tolerance, v_ref must be positive and n >= 8".into()));
        }
        Ok(())
    }
}

/// Steady-state solution on an `h x w` lattice.
#[derive(Debug, Clone)]
pub struct Solution {
    pub height: usize,
    pub width: usize,
    /// Velocity magnitude per cell in m/s, zero on solids.
    pub speed: Vec<f64>,
    pub converged: bool,
    pub steps: usize,
    /// Relative change of total fluid mass over the last check interval.
    pub mass_drift: f64,
    /// Relative change of total fluid mass between the initial state and the end.
    pub mass_change: f64,
}

/// Interval between convergence and divergence checks.
pub const CHECK_EVERY: usize = 100;

fn feq(rho: f64, ux: f64, uy: f64, out: &mut [f64; 9]) {
    let usq = 1.5 * (ux * ux + uy * uy);
    for i in 0..9 {
        let eu = 3.0 * (EX[i] as f64 * ux + EY[i] as f64 * uy);
        out[i] = W[i] * rho * (1.0 + eu + 0.5 * eu * eu - usq);
    }
}

/// Solve the channel flow around `solid` (row-major, `h x w`).
///
/// `damping`, if given, holds a per-cell factor `k` in [0, 1): the velocity
/// a cell relaxes towards is scaled by `1 - k`, a Brinkman-style drag.
pub fn solve_lattice(
    solid: &[bool],
    h: usize,
    w: usize,
    damping: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<Solution> {
    cfg.validate()?;
    if solid.len() != h * w || damping.is_some_and(|d| d.len() != h * w) || h < 3 || w < 3 {
        return Err(Error::Shape(format!("lattice {h}x{w} does not match its inputs")));
    }
    let cells = h * w;
    let omega = 1.0 / cfg.tau;
    let mut eq = [0.0; 9];
    feq(1.0, cfg.u_in, 0.0, &mut eq);
    let inlet = eq;
    let fluid_mass = |f: &[[f64; 9]]| -> f64 {
        f.iter()
            .zip(solid)
            .filter(|(_, &s)| !s)
            .map(|(c, _)| c.iter().sum::<f64>())
            .sum()
    };
    let mut f: Vec<[f64; 9]> = vec![inlet; cells];
    let mut post = f.clone();
    let mut prev_u: Vec<[f64; 2]> = vec![[0.0; 2]; cells];
    let initial_mass = fluid_mass(&f);
    let mut prev_mass = initial_mass;
    let mut mass_drift = f64::NAN;
    let mut converged = false;
    let mut steps = 0;

    while steps < cfg.max_steps {
        // collide
        for i in 0..cells {
            if solid[i] {
                post[i] = f[i];
                continue;
            }
            let c = &f[i];
            let rho: f64 = c.iter().sum();
            let mut ux = 0.0;
            let mut uy = 0.0;
            for k in 0..9 {
                ux += EX[k] as f64 * c[k];
                uy += EY[k] as f64 * c[k];
            }
            ux /= rho;
            uy /= rho;
            if let Some(d) = damping {
                let s = 1.0 - d[i];
                ux *= s;
                uy *= s;
            }
            feq(rho, ux, uy, &mut eq);
            for k in 0..9 {
                post[i][k] = c[k] + omega * (eq[k] - c[k]);
            }
        }
        // stream (pull)
        for r in 0..h {
            for col in 0..w {
                let i = r * w + col;
                if solid[i] {
                    continue;
                }
                for k in 0..9 {
                    let mut sr = r as i64 - EY[k];
                    let sc = (col as i64 - EX[k]).clamp(0, w as i64 - 1);
                    let mut dir = k;
                    if sr < 0 || sr >= h as i64 {
                        sr = r as i64;
                        dir = MIRROR_Y[k];
                    }
                    let src = sr as usize * w + sc as usize;
                    f[i][k] = if solid[src] { post[i][OPPOSITE[k]] } else { post[src][dir] };
                }
            }
        }
        // open boundaries
        for r in 0..h {
            if !solid[r * w] {
                f[r * w] = inlet;
            }
            let (last, before) = (r * w + w - 1, r * w + w - 2);
            if !solid[last] && !solid[before] {
                f[last] = f[before];
            }
        }
        steps += 1;

        if steps % CHECK_EVERY == 0 || steps == cfg.max_steps {
            let mut diff = 0.0;
            let mut norm = 0.0;
            for i in 0..cells {
                if solid[i] {
                    continue;
                }
                let c = &f[i];
                let rho: f64 = c.iter().sum();
                if !rho.is_finite() {
                    return Err(Error::Diverged { step: steps });
                }
                let (mut ux, mut uy) = (0.0, 0.0);
                for k in 0..9 {
                    ux += EX[k] as f64 * c[k];
                    uy += EY[k] as f64 * c[k];
                }
                let u = [ux / rho, uy / rho];
                diff += (u[0] - prev_u[i][0]).powi(2) + (u[1] - prev_u[i][1]).powi(2);
                norm += u[0] * u[0] + u[1] * u[1];
                prev_u[i] = u;
            }
            let mass = fluid_mass(&f);
            mass_drift = ((mass - prev_mass) / prev_mass).abs();
            prev_mass = mass;
            if steps > CHECK_EVERY && (diff / norm.max(f64::MIN_POSITIVE)).sqrt() < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }

    let scale = cfg.v_ref / cfg.u_in;
    let speed = (0..cells)
        .map(|i| {
            if solid[i] {
                0.0
            } else {
                (prev_u[i][0].hypot(prev_u[i][1])) * scale
            }
        })
        .collect();
    Ok(Solution {
        height: h,
        width: w,
        speed,
        converged,
        steps,
        mass_drift,
        mass_change: ((prev_mass - initial_mass) / initial_mass).abs(),
    })
}
