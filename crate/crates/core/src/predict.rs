//! Evaluation-mode inference from a checkpoint.

use std::path::Path;

use windflow_tensor::Tensor;

use crate::checkpoint::{load_checkpoint, Checkpoint, Normalization};
use crate::error::{Error, Result};
use crate::nets::{model_input, prediction_to_speed, Model, ModelSpec};
use crate::raster::{ChannelTag, FieldGrid};

/// Trained generator plus the constants to feed it. Safe to share between
/// threads; prediction never mutates the model.
pub struct Predictor {
    model: Model<f32>,
    pub spec: ModelSpec,
    pub spec_hash: String,
    pub trained_on: String,
    pub normalization: Normalization,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: ckpt.generator()?,
            spec: ckpt.header.spec.clone(),
            spec_hash: ckpt.header.spec_hash.clone(),
            trained_on: ckpt.header.dataset.clone(),
            normalization: ckpt.header.normalization.clone(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    /// Network input for a raw geometry raster, `[1, C, H, W]`.
    pub fn input_tensor(&self, geometry: &FieldGrid) -> Result<Tensor<f32>> {
        let want = &self.normalization.geometry_channels;
        if geometry.channels() != want.as_slice() {
            return Err(Error::SpecMismatch(format!(
                "geometry channels {:?}, model expects {want:?}",
                geometry.channels()
            )));
        }
        self.spec.generator.check_input(geometry.height(), geometry.width())?;
        let x = model_input(geometry, self.normalization.max_height, self.spec.generator.sdf_channel)?;
        Ok(x.to_tensor())
    }

    /// Raw generator output in model units.
    pub fn predict_normalized(&self, geometry: &FieldGrid) -> Result<FieldGrid> {
        let y = self.model.predict(&self.input_tensor(geometry)?)?;
        FieldGrid::from_tensor(&y, 0, vec![ChannelTag::Velocity], geometry.extent_m)
    }

    /// Predicted pedestrian-level speed in m/s.
    pub fn predict(&self, geometry: &FieldGrid) -> Result<FieldGrid> {
        Ok(prediction_to_speed(&self.predict_normalized(geometry)?, self.normalization.v_max))
    }
}
