use super::grid::{ChannelTag, FieldGrid};

/// Raw CoordConv channels: row index in `coord_i`, column index in `coord_j`.
pub fn coord_channels_unnormalized(h: usize, w: usize) -> FieldGrid {
    let mut g = FieldGrid::zeros(h, w, vec![ChannelTag::CoordI, ChannelTag::CoordJ], 0.0);
    for r in 0..h {
        for c in 0..w {
            g.set(r, c, 0, r as f32);
            g.set(r, c, 1, c as f32);
        }
    }
    g
}

fn to_unit(i: usize, n: usize) -> f32 {
    if n <= 1 {
        0.0
    } else {
        (2.0 * i as f64 / (n - 1) as f64 - 1.0) as f32
    }
}

/// CoordConv channels affinely mapped onto [-1, 1]; a single row or column
/// degenerates to zeros.
pub fn coord_channels(h: usize, w: usize) -> FieldGrid {
    let mut g = FieldGrid::zeros(h, w, vec![ChannelTag::CoordI, ChannelTag::CoordJ], 0.0);
    for r in 0..h {
        for c in 0..w {
            g.set(r, c, 0, to_unit(r, h));
            g.set(r, c, 1, to_unit(c, w));
        }
    }
    g
}
