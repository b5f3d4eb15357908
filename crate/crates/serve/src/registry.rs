use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use windflow_core::predict::Predictor;
use windflow_core::raster::ChannelTag;

use crate::config::ServiceConfig;
use crate::error::ServeError;

/// What clients see of a loaded checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub spec_hash: String,
    pub arch: String,
    pub trained_on: String,
    pub size: usize,
    pub extent_m: f32,
    pub geometry_channels: Vec<ChannelTag>,
    pub v_max: f64,
}

/// Checkpoints loaded once at startup, shared read-only by every handler.
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<Predictor>>,
}

impl ModelRegistry {
    pub fn load(cfg: &ServiceConfig) -> Result<Self, ServeError> {
        let mut models = BTreeMap::new();
        for (name, path) in &cfg.models {
            let p = Predictor::load(path).map_err(|e| ServeError::Config(format!("model '{name}' at {}: {e}", path.display())))?;
            log::info!("loaded '{name}' ({} on {}, spec {})", p.spec.arch, p.trained_on, &p.spec_hash[..12]);
            models.insert(name.clone(), Arc::new(p));
        }
        Ok(Self { models })
    }

    pub fn from_predictors(models: impl IntoIterator<Item = (String, Predictor)>) -> Self {
        Self {
            models: models.into_iter().map(|(n, p)| (n, Arc::new(p))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Arc<Predictor>, ServeError> {
        self.models.get(name).cloned().ok_or_else(|| ServeError::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn info(&self) -> Vec<ModelInfo> {
        self.models
            .iter()
            .map(|(name, p)| ModelInfo {
                name: name.clone(),
                spec_hash: p.spec_hash.clone(),
                arch: p.spec.arch.clone(),
                trained_on: p.trained_on.clone(),
                size: p.normalization.size,
                extent_m: p.normalization.extent_m,
                geometry_channels: p.normalization.geometry_channels.clone(),
                v_max: p.normalization.v_max,
            })
            .collect()
    }
}
