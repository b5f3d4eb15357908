//! Pedestrian wind comfort from eight directional predictions.
//!
//! Each sector is predicted by turning the geometry so its wind enters from
//! the left edge, running the generator, and turning the result back.
//! Speeds scale linearly from the oracle's reference inlet speed to each
//! wind-rose bin, giving a per-pixel probability of exceeding every class
//! boundary, and the boundaries are then resolved into classes.

mod classify;
mod rose;

use rayon::prelude::*;

pub use classify::{classify, legend, ComfortCriteria, ComfortMap, ComfortSidecar, LegendEntry, Provenance, CLASS_NAMES, NO_DATA};
pub use rose::{sector_index, sector_rotation, WindRose, SECTORS, TRAINING_SECTOR};

use crate::error::{Error, Result};
use crate::predict::Predictor;
use crate::raster::{inside_rotation_disk, rotate_field, ChannelTag, FieldGrid, Interp};

/// Predicted speed in m/s for geometry turned `angle` degrees
/// counter-clockwise before inference, the result turned back.
pub fn predict_at_angle(predictor: &Predictor, geometry: &FieldGrid, angle: i64) -> Result<FieldGrid> {
    if angle.rem_euclid(45) != 0 {
        return Err(Error::UnsupportedAngle(angle));
    }
    if angle.rem_euclid(360) == 0 {
        return predictor.predict(geometry);
    }
    let turned = rotate_field(geometry, angle, Interp::Nearest)?;
    let pred = predictor.predict(&turned)?;
    rotate_field(&pred, -angle, Interp::Bilinear)
}

/// Predicted speed in m/s for wind from compass `sector` (0 = N, clockwise).
pub fn predict_direction(predictor: &Predictor, geometry: &FieldGrid, sector: usize) -> Result<FieldGrid> {
    if sector >= 8 {
        return Err(Error::UnsupportedAngle(sector as i64 * 45));
    }
    predict_at_angle(predictor, geometry, sector_rotation(sector))
}

/// Probability that the speed exceeds `threshold` m/s, per pixel.
///
/// `speeds[s]` is the prediction for sector `s` at inlet speed `u_ref`.
/// Each rose cell contributes its frequency where the prediction scaled to
/// the bin's representative speed is strictly above the threshold.
/// Contributions are summed in ascending order, so the result does not
/// depend on sector labelling.
pub fn exceedance(speeds: &[FieldGrid], rose: &WindRose, threshold: f64, u_ref: f64) -> Result<FieldGrid> {
    rose.validate()?;
    if speeds.len() != 8 {
        return Err(Error::Shape(format!("{} sector predictions, need 8", speeds.len())));
    }
    if !(u_ref > 0.0) {
        return Err(Error::InvalidConfig(format!("reference speed {u_ref} must be positive")));
    }
    let (h, w) = (speeds[0].height(), speeds[0].width());
    if speeds.iter().any(|s| s.height() != h || s.width() != w || s.channel_count() != 1) {
        return Err(Error::Shape("sector predictions differ in shape".into()));
    }
    let factors: Vec<f64> = rose.bin_speeds().iter().map(|v| v / u_ref).collect();
    let mut out = FieldGrid::zeros(h, w, vec![ChannelTag::Probability], speeds[0].extent_m);
    let mut terms = Vec::with_capacity(8 * factors.len());
    for px in 0..h * w {
        terms.clear();
        for (s, grid) in speeds.iter().enumerate() {
            let v = grid.data()[px] as f64;
            for (b, &k) in factors.iter().enumerate() {
                let f = rose.freq[s][b];
                if f > 0.0 && v * k > threshold {
                    terms.push(f);
                }
            }
        }
        terms.sort_by(f64::total_cmp);
        out.data_mut()[px] = terms.iter().sum::<f64>() as f32;
    }
    Ok(out)
}

/// Buildings, plus the corners lost to diagonal rotation when a diagonal
/// sector carries wind.
pub fn no_data_mask(geometry: &FieldGrid, rose: &WindRose) -> Result<Vec<bool>> {
    let (h, w) = (geometry.height(), geometry.width());
    let m = geometry
        .channel_index(ChannelTag::Mask)
        .ok_or_else(|| Error::InvalidGrid("geometry lacks a mask channel".into()))?;
    let diagonal = (0..8).any(|s| sector_rotation(s) % 90 != 0 && rose.sector_contributes(s));
    Ok((0..h * w)
        .map(|i| geometry.get(i / w, i % w, m) != 0.0 || (diagonal && !inside_rotation_disk(h, i / w, i % w)))
        .collect())
}

/// Full pipeline: eight directional predictions, exceedance of every class
/// boundary, classification. Sectors without wind are not predicted.
pub fn comfort_map(predictor: &Predictor, geometry: &FieldGrid, rose: &WindRose, criteria: &ComfortCriteria) -> Result<ComfortMap> {
    rose.validate()?;
    criteria.validate()?;
    if geometry.height() != geometry.width() {
        return Err(Error::InvalidGrid("comfort maps need a square geometry".into()));
    }
    let speeds: Vec<FieldGrid> = (0..8)
        .into_par_iter()
        .map(|s| {
            if rose.sector_contributes(s) {
                predict_direction(predictor, geometry, s)
            } else {
                Ok(FieldGrid::zeros(geometry.height(), geometry.width(), vec![ChannelTag::Velocity], geometry.extent_m))
            }
        })
        .collect::<Result<_>>()?;
    let u_ref = predictor.normalization.v_ref;
    let maps = criteria
        .thresholds_ms
        .iter()
        .map(|&t| exceedance(&speeds, rose, t, u_ref))
        .collect::<Result<Vec<_>>>()?;
    let mask = no_data_mask(geometry, rose)?;
    let mut map = classify(&maps, criteria, Some(&mask))?;
    map.provenance = Some(Provenance {
        model: format!("{}@{}", predictor.spec.arch, predictor.trained_on),
        spec_hash: predictor.spec_hash.clone(),
        rose: rose.clone(),
        criteria: criteria.clone(),
    });
    Ok(map)
}
