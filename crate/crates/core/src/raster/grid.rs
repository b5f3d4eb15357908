use serde::{Deserialize, Serialize};
use windflow_tensor::{Float, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelTag {
    Mask,
    Height,
    Sdf,
    CoordI,
    CoordJ,
    Velocity,
    Class,
    Probability,
}

/// Side information that travels with a grid but is not part of its pixels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    /// Divisor mapping the raw SDF (pixels) into [-1, 1].
    pub sdf_scale: Option<f32>,
    /// Set when the SDF was computed from a mask without any object.
    pub sdf_empty: bool,
    /// Scalar summary attached to derived maps (e.g. mean residual).
    pub mean: Option<f64>,
}

/// An H x W x C raster of `f32`, stored row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    height: usize,
    width: usize,
    channels: Vec<ChannelTag>,
    data: Vec<f32>,
    pub extent_m: f32,
    pub meta: GridMeta,
}

impl FieldGrid {
    pub fn zeros(height: usize, width: usize, channels: Vec<ChannelTag>, extent_m: f32) -> Self {
        let n = height * width * channels.len();
        Self {
            height,
            width,
            channels,
            data: vec![0.0; n],
            extent_m,
            meta: GridMeta::default(),
        }
    }

    pub fn from_data(
        height: usize,
        width: usize,
        channels: Vec<ChannelTag>,
        data: Vec<f32>,
        extent_m: f32,
    ) -> Result<Self> {
        if data.len() != height * width * channels.len() {
            return Err(Error::InvalidGrid(format!(
                "{}x{}x{} grid given {} values",
                height,
                width,
                channels.len(),
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            extent_m,
            meta: GridMeta::default(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[ChannelTag] {
        &self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel_index(&self, tag: ChannelTag) -> Option<usize> {
        self.channels.iter().position(|&t| t == tag)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels.len() + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        let c = self.channels.len();
        self.data[(row * self.width + col) * c + ch] = v;
    }

    /// One channel as a dense row-major plane.
    pub fn plane(&self, ch: usize) -> Vec<f32> {
        let c = self.channels.len();
        self.data.iter().skip(ch).step_by(c).copied().collect()
    }

    /// Single-channel grid built from a plane.
    pub fn from_plane(
        height: usize,
        width: usize,
        tag: ChannelTag,
        plane: Vec<f32>,
        extent_m: f32,
    ) -> Result<Self> {
        Self::from_data(height, width, vec![tag], plane, extent_m)
    }

    /// Extract one channel into its own grid.
    pub fn select(&self, ch: usize) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: vec![self.channels[ch]],
            data: self.plane(ch),
            extent_m: self.extent_m,
            meta: self.meta.clone(),
        }
    }

    /// Channel-wise concatenation of grids with equal extent.
    pub fn stack(parts: &[&FieldGrid]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidGrid("nothing to stack".into()))?;
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::InvalidGrid("stacked grids differ in size".into()));
        }
        let channels: Vec<ChannelTag> = parts.iter().flat_map(|p| p.channels.clone()).collect();
        let mut data = Vec::with_capacity(h * w * channels.len());
        for px in 0..h * w {
            for p in parts {
                let c = p.channels.len();
                data.extend_from_slice(&p.data[px * c..(px + 1) * c]);
            }
        }
        let mut out = Self::from_data(h, w, channels, data, first.extent_m)?;
        out.meta = first.meta.clone();
        Ok(out)
    }

    /// Check the universal invariants: finite values, binary mask, and a
    /// non-negative height channel that vanishes off the mask.
    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value {bad}")));
        }
        let mask = self.channel_index(ChannelTag::Mask);
        if let Some(m) = mask {
            if self.plane(m).iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidGrid("mask channel is not binary".into()));
            }
        }
        if let Some(hc) = self.channel_index(ChannelTag::Height) {
            for px in 0..self.height * self.width {
                let c = self.channels.len();
                let h = self.data[px * c + hc];
                if h < 0.0 {
                    return Err(Error::InvalidGrid("negative height".into()));
                }
                if let Some(m) = mask {
                    if self.data[px * c + m] == 0.0 && h != 0.0 {
                        return Err(Error::InvalidGrid("height outside of mask".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// `[1, C, H, W]` tensor view of the grid.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels.len());
        Tensor::from_fn(&[1, c, h, w], |i| {
            let (ch, px) = (i / (h * w), i % (h * w));
            T::lit(self.data[px * c + ch] as f64)
        })
    }

    /// Inverse of [`FieldGrid::to_tensor`] for sample `index` of a batch.
    pub fn from_tensor<T: Float>(
        t: &Tensor<T>,
        index: usize,
        channels: Vec<ChannelTag>,
        extent_m: f32,
    ) -> Result<Self> {
        let [n, c, h, w] = t.dims4()?;
        if index >= n || c != channels.len() {
            return Err(Error::Shape(format!(
                "tensor {:?} cannot provide sample {index} with {} channels",
                t.shape(),
                channels.len()
            )));
        }
        let src = &t.data()[index * c * h * w..(index + 1) * c * h * w];
        let mut data = vec![0.0f32; h * w * c];
        for ch in 0..c {
            for px in 0..h * w {
                data[px * c + ch] = src[ch * h * w + px].as_f64() as f32;
            }
        }
        Self::from_data(h, w, channels, data, extent_m)
    }
}
