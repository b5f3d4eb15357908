//! Conversions between dataset rasters and the model's [-1, 1] working range.

use crate::error::{Error, Result};
use crate::raster::{denormalize, normalize, normalized_sdf, ChannelTag, FieldGrid};

/// Model input for a raw geometry raster: mask mapped to {-1, 1}, height
/// divided by `max_height` then mapped to [-1, 1], optionally followed by
/// the normalized SDF of the mask.
pub fn model_input(geometry: &FieldGrid, max_height: f64, with_sdf: bool) -> Result<FieldGrid> {
    geometry.validate()?;
    let mask_ch = geometry
        .channel_index(ChannelTag::Mask)
        .ok_or_else(|| Error::InvalidGrid("geometry lacks a mask channel".into()))?;
    let mut out = geometry.clone();
    let c = out.channel_count();
    let height_ch = geometry.channel_index(ChannelTag::Height);
    let scale = if max_height > 0.0 { max_height } else { 1.0 };
    for px in out.data_mut().chunks_mut(c) {
        px[mask_ch] = 2.0 * px[mask_ch] - 1.0;
        if let Some(h) = height_ch {
            px[h] = (2.0 * (px[h] as f64 / scale).min(1.0) - 1.0) as f32;
        }
    }
    if with_sdf {
        let sdf = normalized_sdf(&geometry.select(mask_ch))?;
        out = FieldGrid::stack(&[&out, &sdf])?;
    }
    Ok(out)
}

/// Flow target in model units.
pub fn flow_target(flow: &FieldGrid, v_max: f64) -> FieldGrid {
    normalize(flow, v_max)
}

/// Generator output (model units) back to m/s.
pub fn prediction_to_speed(pred: &FieldGrid, v_max: f64) -> FieldGrid {
    denormalize(pred, v_max)
}
