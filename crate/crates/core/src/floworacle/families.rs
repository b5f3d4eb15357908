use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve, SolverConfig};
use crate::error::{Error, Result};
use crate::raster::{
    bucketize, rasterize, sample_file_name, Building, ChannelTag, DatasetManifest, Family, FieldGrid, SampleEntry,
    SamplePair, Scene,
};

/// Height (m) at which the halo drag reaches its nominal coefficient.
pub const HEIGHT_REF_M: f64 = 60.0;
/// Velocity ceiling of the urban family, m/s.
pub const URBAN_V_MAX: f64 = 15.0;
const MAX_ATTEMPTS: usize = 1000;

/// Inclusive-exclusive sampling range.
pub type Range = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub count: usize,
    pub seed: u64,
    /// Side of the raster frame in meters.
    pub extent_m: f64,
    pub n_bins: usize,
    pub train_fraction: f64,
    /// Footprint size along the building's long axis, m.
    pub length_m: Range,
    /// Footprint size across the long axis, m.
    pub width_m: Range,
    /// Largest offset of a building center from its anchor, m.
    pub offset_m: f64,
    pub angle_deg: Range,
    pub height_m: Range,
    /// Number of buildings for the urban family.
    pub urban_buildings: (usize, usize),
}

impl FamilySpec {
    pub fn new(family: Family, count: usize, seed: u64) -> Self {
        let mut spec = Self {
            family,
            count,
            seed,
            extent_m: 200.0,
            n_bins: crate::raster::DEFAULT_BINS,
            train_fraction: 0.8,
            length_m: (20.0, 50.0),
            width_m: (15.0, 40.0),
            offset_m: 30.0,
            angle_deg: (0.0, 90.0),
            height_m: (20.0, 20.0),
            urban_buildings: (6, 14),
        };
        match family {
            Family::Wall => {
                spec.length_m = (40.0, 80.0);
                spec.width_m = (6.0, 12.0);
                spec.angle_deg = (0.0, 180.0);
            }
            Family::Single => {}
            Family::Two => {
                spec.length_m = (15.0, 40.0);
                spec.width_m = (15.0, 35.0);
                spec.offset_m = 15.0;
            }
            Family::TwoHeight => {
                spec.length_m = (15.0, 40.0);
                spec.width_m = (15.0, 35.0);
                spec.offset_m = 15.0;
                spec.height_m = (10.0, 60.0);
            }
            Family::Urban => {
                spec.length_m = (12.0, 35.0);
                spec.width_m = (12.0, 30.0);
                spec.height_m = (10.0, 60.0);
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: Range| r.0 > 0.0 && r.0 <= r.1;
        if self.count == 0 {
            return Err(Error::InvalidConfig("count must be positive".into()));
        }
        if !(ordered(self.length_m) && ordered(self.width_m) && ordered(self.height_m) && self.angle_deg.0 <= self.angle_deg.1) {
            return Err(Error::InvalidConfig("parameter ranges must be positive and ordered".into()));
        }
        // The largest footprint plus offset must fit in the 10% margins.
        let reach = 0.5 * self.length_m.1.hypot(self.width_m.1) + self.offset_m;
        let anchor_slack = match self.family {
            Family::Two | Family::TwoHeight => 0.175 * self.extent_m,
            _ => 0.0,
        };
        if self.family != Family::Urban && reach + anchor_slack > 0.4 * self.extent_m {
            return Err(Error::InvalidConfig(format!(
                "buildings reach {:.1} m from their anchor, beyond the 10% margin",
                reach + anchor_slack
            )));
        }
        Ok(())
    }

    /// Side of the domain the scene is drawn in: urban scenes are solved on
    /// twice the frame and cropped afterwards.
    pub fn domain_m(&self) -> f64 {
        if self.family == Family::Urban {
            2.0 * self.extent_m
        } else {
            self.extent_m
        }
    }
}

fn rectangle(cx: f64, cy: f64, length: f64, width: f64, angle_deg: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (a * length, b * width);
            [cx + x * c - y * s, cy + x * s + y * c]
        })
        .collect()
}

fn sample(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

fn building(rng: &mut ChaCha8Rng, spec: &FamilySpec, anchor: (f64, f64)) -> Building {
    let dx = rng.random_range(-spec.offset_m..=spec.offset_m);
    let dy = rng.random_range(-spec.offset_m..=spec.offset_m);
    let length = sample(rng, spec.length_m);
    let width = sample(rng, spec.width_m).min(length);
    let angle = sample(rng, spec.angle_deg);
    Building {
        polygon: rectangle(anchor.0 + dx, anchor.1 + dy, length, width, angle),
        height: sample(rng, spec.height_m),
    }
}

fn within_margin(b: &Building, domain: f64) -> bool {
    b.polygon
        .iter()
        .all(|v| v.iter().all(|&x| x >= 0.1 * domain && x <= 0.9 * domain))
}

/// Pixel sets of the buildings at `size`, grown by one pixel, must not
/// overlap, and each footprint must cover at least one pixel.
fn well_separated(scene: &Scene, size: usize) -> Result<bool> {
    let mut owner = vec![usize::MAX; size * size];
    for (k, b) in scene.buildings.iter().enumerate() {
        let single = Scene {
            extent: scene.extent,
            buildings: vec![b.clone()],
        };
        let mask = rasterize(&single, size, false)?;
        let mut any = false;
        for r in 0..size {
            for c in 0..size {
                if mask.get(r, c, 0) != 1.0 {
                    continue;
                }
                any = true;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= size as i64 || cc >= size as i64 {
                            continue;
                        }
                        let o = &mut owner[rr as usize * size + cc as usize];
                        if *o != usize::MAX && *o != k {
                            return Ok(false);
                        }
                        *o = k;
                    }
                }
            }
        }
        if !any {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Draw one valid scene of the family; invalid candidates are redrawn from
/// the same stream so the result stays a function of the stream alone.
pub fn random_scene(spec: &FamilySpec, rng: &mut ChaCha8Rng, size: usize) -> Result<Scene> {
    let domain = spec.domain_m();
    let mid = 0.5 * domain;
    for _ in 0..MAX_ATTEMPTS {
        let mut scene = Scene::new(domain);
        match spec.family {
            Family::Wall | Family::Single => scene.buildings.push(building(rng, spec, (mid, mid))),
            Family::Two | Family::TwoHeight => {
                let gap = 0.175 * domain;
                scene.buildings.push(building(rng, spec, (mid - gap, mid)));
                scene.buildings.push(building(rng, spec, (mid + gap, mid)));
            }
            Family::Urban => {
                let target = rng.random_range(spec.urban_buildings.0..=spec.urban_buildings.1);
                for _ in 0..target * 20 {
                    if scene.buildings.len() == target {
                        break;
                    }
                    let anchor = (rng.random_range(0.1 * domain..0.9 * domain), rng.random_range(0.1 * domain..0.9 * domain));
                    let mut candidate = scene.clone();
                    candidate.buildings.push(building(rng, spec, anchor));
                    let b = candidate.buildings.last().unwrap();
                    if within_margin(b, domain) && candidate.validate().is_ok() && well_separated(&candidate, size)? {
                        scene = candidate;
                    }
                }
            }
        }
        let ok = !scene.buildings.is_empty()
            && scene.buildings.iter().all(|b| within_margin(b, domain))
            && scene.validate().is_ok()
            && well_separated(&scene, size)?;
        if ok {
            return Ok(scene);
        }
        log::debug!("rejected a {} scene candidate", spec.family);
    }
    Err(Error::InvalidConfig(format!(
        "no valid {} scene after {MAX_ATTEMPTS} attempts",
        spec.family
    )))
}

fn crop_center_disk(grid: &FieldGrid, n: usize, extent_m: f32) -> Result<FieldGrid> {
    let off = (grid.height() - n) / 2;
    let cc = grid.channel_count();
    let mut out = FieldGrid::zeros(n, n, grid.channels().to_vec(), extent_m);
    let half = n as f64 / 2.0;
    for r in 0..n {
        for c in 0..n {
            let (y, x) = (r as f64 + 0.5 - half, c as f64 + 0.5 - half);
            if x * x + y * y > half * half {
                continue;
            }
            for ch in 0..cc {
                out.set(r, c, ch, grid.get(r + off, c + off, ch));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SamplePair>,
    pub scenes: Vec<Scene>,
    /// Samples whose solve hit `max_steps` before converging.
    pub unconverged: usize,
}

/// Generate `spec.count` samples. Each sample draws its scene from its own
/// ChaCha8 stream, so results do not depend on scheduling.
pub fn generate(spec: &FamilySpec, cfg: &SolverConfig) -> Result<GeneratedDataset> {
    spec.validate()?;
    cfg.validate()?;
    let n = cfg.n;
    let urban = spec.family == Family::Urban;
    let solve_size = if urban { 2 * n } else { n };
    let with_height = spec.family.has_height();

    let scenes: Vec<Scene> = (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            random_scene(spec, &mut rng, solve_size)
        })
        .collect::<Result<_>>()?;

    let raw: Vec<(FieldGrid, FieldGrid, bool)> = scenes
        .par_iter()
        .map(|scene| -> Result<_> {
            let geometry = rasterize(scene, solve_size, with_height)?;
            let (flow, info) = solve(&geometry, cfg, with_height.then_some(HEIGHT_REF_M))?;
            if urban {
                let e = spec.extent_m as f32;
                Ok((crop_center_disk(&geometry, n, e)?, crop_center_disk(&flow, n, e)?, info.converged))
            } else {
                Ok((geometry, flow, info.converged))
            }
        })
        .collect::<Result<_>>()?;

    let observed = raw
        .iter()
        .flat_map(|(_, f, _)| f.data().iter().copied())
        .fold(0.0f32, f32::max) as f64;
    let v_max = if urban {
        if observed > URBAN_V_MAX {
            log::warn!("urban speeds reach {observed:.2} m/s; clamping to {URBAN_V_MAX}");
        }
        URBAN_V_MAX
    } else {
        ((observed * 2.0).ceil() / 2.0).max(0.5)
    };
    let unconverged = raw.iter().filter(|(_, _, c)| !c).count();
    let max_height = scenes.iter().map(Scene::max_height).fold(0.0, f64::max);

    let samples = raw
        .into_iter()
        .map(|(geometry, mut flow, _)| {
            flow.data_mut().iter_mut().for_each(|v| *v = v.min(v_max as f32));
            Ok(SamplePair {
                geometry,
                flow: bucketize(&flow, v_max, spec.n_bins)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut channel_schema = spec.family.geometry_channels();
    channel_schema.push(ChannelTag::Velocity);
    let manifest = DatasetManifest {
        name: format!("{}-seed{}-n{}", spec.family, spec.seed, spec.count),
        family: spec.family,
        sample_count: spec.count,
        channel_schema,
        size: n,
        extent_m: spec.extent_m as f32,
        v_max,
        v_ref: cfg.v_ref,
        max_height,
        n_bins: spec.n_bins,
        split_seed: spec.seed,
        train_fraction: spec.train_fraction,
        samples: (0..spec.count)
            .map(|id| SampleEntry {
                id,
                file: sample_file_name(id),
            })
            .collect(),
    };
    Ok(GeneratedDataset {
        manifest,
        samples,
        scenes,
        unconverged,
    })
}
