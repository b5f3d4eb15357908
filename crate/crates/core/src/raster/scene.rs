use serde::{Deserialize, Serialize};

use super::grid::{ChannelTag, FieldGrid};
use crate::error::{Error, Result};

/// One building footprint. Coordinates are meters from the top-left corner
/// of the frame: `x` grows to the right, `y` grows downward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub polygon: Vec<[f64; 2]>,
    pub height: f64,
}

/// Vector scene of building footprints. Wind enters through the left edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub extent: f64,
    #[serde(default)]
    pub buildings: Vec<Building>,
}

impl Scene {
    pub fn new(extent: f64) -> Self {
        Self {
            extent,
            buildings: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::InvalidScene(format!("extent {} must be positive", self.extent)));
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if b.polygon.len() < 3 {
                return Err(Error::InvalidScene(format!("building {i} has fewer than 3 vertices")));
            }
            if !(b.height.is_finite() && b.height > 0.0) {
                return Err(Error::InvalidScene(format!("building {i} height {} must be positive", b.height)));
            }
            for v in &b.polygon {
                let inside = v.iter().all(|c| c.is_finite() && *c >= 0.0 && *c <= self.extent);
                if !inside {
                    return Err(Error::InvalidScene(format!(
                        "building {i} vertex ({}, {}) outside [0, {}]",
                        v[0], v[1], self.extent
                    )));
                }
            }
            if self_intersects(&b.polygon) {
                return Err(Error::InvalidScene(format!("building {i} polygon self-intersects")));
            }
        }
        Ok(())
    }

    pub fn max_height(&self) -> f64 {
        self.buildings.iter().map(|b| b.height).fold(0.0, f64::max)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True if any two non-adjacent edges touch.
fn self_intersects(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

/// Even-odd ray casting.
pub(crate) fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Rasterize a scene into a `size x size` grid.
///
/// A pixel is covered when its center lies inside any footprint. With
/// `with_height` a second channel carries the building height in meters
/// (the tallest covering building), zero elsewhere.
pub fn rasterize(scene: &Scene, size: usize, with_height: bool) -> Result<FieldGrid> {
    if size < 8 {
        return Err(Error::InvalidScene(format!("raster size {size} below 8")));
    }
    scene.validate()?;
    let mut channels = vec![ChannelTag::Mask];
    if with_height {
        channels.push(ChannelTag::Height);
    }
    let mut grid = FieldGrid::zeros(size, size, channels, scene.extent as f32);
    let px = scene.extent / size as f64;
    for b in &scene.buildings {
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for v in &b.polygon {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let span = |lo: f64, hi: f64| {
            let a = ((lo / px - 0.5).floor().max(0.0)) as usize;
            let b = ((hi / px - 0.5).ceil().max(0.0) as usize).min(size - 1);
            (a, b)
        };
        let (c0, c1) = span(lo[0], hi[0]);
        let (r0, r1) = span(lo[1], hi[1]);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let center = [(c as f64 + 0.5) * px, (r as f64 + 0.5) * px];
                if point_in_polygon(center, &b.polygon) {
                    grid.set(r, c, 0, 1.0);
                    if with_height && grid.get(r, c, 1) < b.height as f32 {
                        grid.set(r, c, 1, b.height as f32);
                    }
                }
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64, h: f64) -> Building {
        Building {
            polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            height: h,
        }
    }

    #[test]
    fn empty_scene_gives_empty_mask() {
        let g = rasterize(&Scene::new(8.0), 8, false).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn central_square_covers_four_pixel_centers() {
        let mut s = Scene::new(8.0);
        s.buildings.push(square(3.0, 3.0, 5.0, 5.0, 10.0));
        let g = rasterize(&s, 8, false).unwrap();
        // brute force over all 64 centers
        let mut expected = 0;
        for r in 0..8 {
            for c in 0..8 {
                let inside = point_in_polygon([c as f64 + 0.5, r as f64 + 0.5], &s.buildings[0].polygon);
                assert_eq!(inside, g.get(r, c, 0) == 1.0);
                expected += inside as usize;
            }
        }
        assert_eq!(expected, 4);
        assert_eq!(g.data().iter().filter(|&&v| v == 1.0).count(), 4);
    }

    #[test]
    fn height_channel_tracks_buildings() {
        let mut s = Scene::new(64.0);
        s.buildings.push(square(8.0, 8.0, 24.0, 24.0, 30.0));
        s.buildings.push(square(30.0, 30.0, 50.0, 50.0, 12.0));
        let g = rasterize(&s, 32, true).unwrap();
        assert_eq!(g.channels(), &[ChannelTag::Mask, ChannelTag::Height]);
        assert_eq!((g.height(), g.width(), g.channel_count()), (32, 32, 2));
        g.validate().unwrap();
        assert_eq!(g.get(8, 8, 1), 30.0);
        assert_eq!(g.get(20, 20, 1), 12.0);
        assert_eq!(g.get(0, 0, 1), 0.0);
    }

    #[test]
    fn rejects_bad_scenes() {
        let mut s = Scene::new(10.0);
        s.buildings.push(Building {
            polygon: vec![[1.0, 1.0], [5.0, 5.0], [5.0, 1.0], [1.0, 5.0]],
            height: 3.0,
        });
        assert!(matches!(rasterize(&s, 8, false), Err(Error::InvalidScene(_))));
        let mut s = Scene::new(10.0);
        s.buildings.push(square(1.0, 1.0, 12.0, 3.0, 3.0));
        assert!(matches!(s.validate(), Err(Error::InvalidScene(_))));
        let mut s = Scene::new(10.0);
        s.buildings.push(square(1.0, 1.0, 2.0, 2.0, 0.0));
        assert!(s.validate().is_err());
        assert!(rasterize(&Scene::new(10.0), 4, false).is_err());
    }
}
