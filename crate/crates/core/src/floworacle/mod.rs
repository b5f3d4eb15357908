//! Desk-scale flow oracle: a lattice-Boltzmann channel solver and random
//! scene families that produce (geometry, flow) training pairs.

mod families;
mod lbm;

pub use families::{generate, random_scene, FamilySpec, GeneratedDataset};
pub use lbm::{solve_lattice, Solution, SolverConfig, CHECK_EVERY};

use crate::error::{Error, Result};
use crate::raster::{ChannelTag, FieldGrid};

/// Drag coefficient of the height halo.
pub const HALO_DRAG: f64 = 0.5;

/// Outcome flags of a grid solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub converged: bool,
    pub steps: usize,
    pub mass_drift: f64,
    pub mass_change: f64,
}

/// Per-cell damping from building heights: fluid cells touching a building
/// (8-neighbourhood) get `HALO_DRAG * h / h_ref`, capped below one.
pub fn halo_damping(solid: &[bool], heights: &[f32], h: usize, w: usize, h_ref: f64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            if solid[r * w + c] {
                continue;
            }
            let mut tallest = 0.0f64;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if solid[j] {
                        tallest = tallest.max(heights[j] as f64);
                    }
                }
            }
            out[r * w + c] = (HALO_DRAG * tallest / h_ref).min(0.95);
        }
    }
    out
}

/// Solve the flow around a geometry grid and return its velocity magnitude
/// in m/s. A height channel, if present, adds drag around taller buildings
/// relative to `h_ref` meters.
pub fn solve(geometry: &FieldGrid, cfg: &SolverConfig, h_ref: Option<f64>) -> Result<(FieldGrid, SolveInfo)> {
    let mask_ch = geometry
        .channel_index(ChannelTag::Mask)
        .ok_or_else(|| Error::InvalidGrid("solve needs a mask channel".into()))?;
    geometry.validate()?;
    let (h, w) = (geometry.height(), geometry.width());
    let solid: Vec<bool> = geometry.plane(mask_ch).iter().map(|&v| v == 1.0).collect();
    let damping = match (geometry.channel_index(ChannelTag::Height), h_ref) {
        (Some(hc), Some(href)) if href > 0.0 => Some(halo_damping(&solid, &geometry.plane(hc), h, w, href)),
        _ => None,
    };
    let sol = solve_lattice(&solid, h, w, damping.as_deref(), cfg)?;
    if !sol.converged {
        log::warn!("flow solve stopped unconverged after {} steps", sol.steps);
    }
    let flow = FieldGrid::from_plane(
        h,
        w,
        ChannelTag::Velocity,
        sol.speed.iter().map(|&v| v as f32).collect(),
        geometry.extent_m,
    )?;
    Ok((
        flow,
        SolveInfo {
            converged: sol.converged,
            steps: sol.steps,
            mass_drift: sol.mass_drift,
            mass_change: sol.mass_change,
        },
    ))
}
