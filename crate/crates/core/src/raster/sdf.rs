//! Signed distance to object boundaries, exact Euclidean between pixel centers.

use super::grid::{ChannelTag, FieldGrid};
use crate::error::{Error, Result};

fn mask_plane(mask: &FieldGrid) -> Result<Vec<bool>> {
    let ch = match mask.channel_index(ChannelTag::Mask) {
        Some(c) => c,
        None if mask.channel_count() == 1 => 0,
        None => return Err(Error::InvalidGrid("signed_distance needs a mask channel".into())),
    };
    mask.plane(ch)
        .into_iter()
        .map(|v| match v {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(Error::InvalidGrid(format!("mask value {v} is not binary"))),
        })
        .collect()
}

/// Covered pixels with at least one 4-neighbour that is uncovered or lies
/// outside the frame.
pub(crate) fn boundary(covered: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && covered[r as usize * w + c as usize]
    };
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !covered[r * w + c] {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            out[r * w + c] = !at(ri - 1, ci) || !at(ri + 1, ci) || !at(ri, ci - 1) || !at(ri, ci + 1);
        }
    }
    out
}

fn diagonal(h: usize, w: usize) -> f64 {
    ((h * h + w * w) as f64).sqrt()
}

/// Signed values in f64: `0` on boundary pixels, `-d` inside, `+d` outside,
/// the diagonal everywhere when the mask has no objects.
fn signed_values(covered: &[bool], edge: &[bool], diag: f64, sq: impl Fn(usize) -> Option<u64>) -> Vec<f64> {
    if !edge.iter().any(|&b| b) {
        return vec![diag; covered.len()];
    }
    (0..covered.len())
        .map(|i| {
            let d = sq(i).map(|s| (s as f64).sqrt()).unwrap_or(diag);
            if edge[i] {
                0.0
            } else if covered[i] {
                -d
            } else {
                d
            }
        })
        .collect()
}

fn to_grid(mask: &FieldGrid, values: &[f64]) -> FieldGrid {
    let (h, w) = (mask.height(), mask.width());
    let mut out = FieldGrid::zeros(h, w, vec![ChannelTag::Sdf], mask.extent_m);
    out.meta.sdf_scale = Some(diagonal(h, w) as f32);
    // boundary pixels, and only they, sit at zero
    out.meta.sdf_empty = !values.contains(&0.0);
    for (o, &v) in out.data_mut().iter_mut().zip(values) {
        *o = v as f32;
    }
    out
}

/// SDF of a binary mask in pixel units: `+d` outside every object, `0` on
/// boundary pixels and `-d` strictly inside, where `d` is the distance to the
/// nearest boundary pixel center.
///
/// A mask without objects yields the grid diagonal everywhere and sets
/// `meta.sdf_empty`. `meta.sdf_scale` always records the diagonal, the
/// divisor used by [`normalized_sdf`].
pub fn signed_distance(mask: &FieldGrid) -> Result<FieldGrid> {
    Ok(to_grid(mask, &signed_distance_exact(mask)?))
}

/// The values behind [`signed_distance`] before rounding to f32 storage.
pub fn signed_distance_exact(mask: &FieldGrid) -> Result<Vec<f64>> {
    let covered = mask_plane(mask)?;
    let (h, w) = (mask.height(), mask.width());
    let edge = boundary(&covered, h, w);

    // column pass: vertical distance to the nearest boundary pixel
    let inf = u64::MAX / 4;
    let mut col = vec![inf; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if edge[r * w + c] {
                last = Some(r);
            }
            if let Some(l) = last {
                col[r * w + c] = (r - l) as u64;
            }
        }
        last = None;
        for r in (0..h).rev() {
            if edge[r * w + c] {
                last = Some(r);
            }
            if let Some(l) = last {
                col[r * w + c] = col[r * w + c].min((l - r) as u64);
            }
        }
    }
    // row pass: exact minimum over every column
    let mut sq = vec![inf; h * w];
    for r in 0..h {
        let line = &col[r * w..(r + 1) * w];
        for c in 0..w {
            let mut best = inf;
            for (cc, &g) in line.iter().enumerate() {
                if g == inf {
                    continue;
                }
                let dc = c.abs_diff(cc) as u64;
                best = best.min(dc * dc + g * g);
            }
            sq[r * w + c] = best;
        }
    }
    Ok(signed_values(&covered, &edge, diagonal(h, w), |i| (sq[i] != inf).then_some(sq[i])))
}

/// O(N^2) reference: minimum over all boundary pixels, same sign convention.
pub fn signed_distance_brute_force(mask: &FieldGrid) -> Result<FieldGrid> {
    let covered = mask_plane(mask)?;
    let (h, w) = (mask.height(), mask.width());
    let edge = boundary(&covered, h, w);
    let points: Vec<(i64, i64)> = (0..h * w)
        .filter(|&i| edge[i])
        .map(|i| ((i / w) as i64, (i % w) as i64))
        .collect();
    let values = signed_values(&covered, &edge, diagonal(h, w), |i| {
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        points
            .iter()
            .map(|&(pr, pc)| ((pr - r).pow(2) + (pc - c).pow(2)) as u64)
            .min()
    });
    Ok(to_grid(mask, &values))
}

/// SDF divided by its recorded scale, landing in [-1, 1].
pub fn normalized_sdf(mask: &FieldGrid) -> Result<FieldGrid> {
    let mut sdf = signed_distance(mask)?;
    let scale = sdf.meta.sdf_scale.expect("set by signed_distance");
    sdf.data_mut().iter_mut().for_each(|v| *v /= scale);
    Ok(sdf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(h: usize, w: usize, on: impl Fn(usize, usize) -> bool) -> FieldGrid {
        let data = (0..h * w).map(|i| on(i / w, i % w) as u8 as f32).collect();
        FieldGrid::from_plane(h, w, ChannelTag::Mask, data, h as f32).unwrap()
    }

    #[test]
    fn block_center_is_one_pixel_inside() {
        let m = mask_from(9, 9, |r, c| (3..6).contains(&r) && (3..6).contains(&c));
        let s = signed_distance(&m).unwrap();
        assert_eq!(s.get(4, 4, 0), -1.0);
        assert_eq!(s.get(3, 3, 0), 0.0);
        assert_eq!(s.get(4, 4, 0), signed_distance_brute_force(&m).unwrap().get(4, 4, 0));
    }

    #[test]
    fn isolated_pixel_distance() {
        let m = mask_from(11, 11, |r, c| r == 5 && c == 2);
        let s = signed_distance(&m).unwrap();
        assert_eq!(s.get(5, 2, 0), 0.0);
        assert_eq!(s.get(5, 7, 0), 5.0);
    }

    #[test]
    fn empty_mask_is_capped_and_flagged() {
        let m = mask_from(6, 8, |_, _| false);
        let s = signed_distance(&m).unwrap();
        assert!(s.meta.sdf_empty);
        assert!(s.data().iter().all(|&v| v == 10.0));
        let n = normalized_sdf(&m).unwrap();
        assert!(n.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_binary_mask_is_rejected() {
        let mut m = mask_from(4, 4, |_, _| false);
        m.data_mut()[3] = 0.5;
        assert!(signed_distance(&m).is_err());
    }

    fn random_mask() -> impl proptest::strategy::Strategy<Value = FieldGrid> {
        use proptest::prelude::*;
        (1usize..14, 1usize..14).prop_flat_map(|(h, w)| {
            proptest::collection::vec(proptest::bool::weighted(0.3), h * w).prop_map(move |bits| {
                let data = bits.iter().map(|&b| b as u8 as f32).collect();
                FieldGrid::from_plane(h, w, ChannelTag::Mask, data, 1.0).unwrap()
            })
        })
    }

    proptest::proptest! {
        #[test]
        fn matches_brute_force(m in random_mask()) {
            let fast = signed_distance(&m).unwrap();
            let slow = signed_distance_brute_force(&m).unwrap();
            for (a, b) in fast.data().iter().zip(slow.data()) {
                proptest::prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn sign_partitions_the_mask(m in random_mask()) {
            let s = signed_distance(&m).unwrap();
            let covered: Vec<bool> = m.data().iter().map(|&v| v == 1.0).collect();
            let edge = boundary(&covered, m.height(), m.width());
            let normalized = normalized_sdf(&m).unwrap();
            for i in 0..covered.len() {
                let v = s.data()[i];
                let expect = if edge[i] { 0.0 } else if covered[i] { -1.0 } else { 1.0 };
                proptest::prop_assert_eq!(if v == 0.0 { 0.0 } else { v.signum() }, expect);
                proptest::prop_assert!(normalized.data()[i].abs() <= 1.0);
            }
        }
    }
}
