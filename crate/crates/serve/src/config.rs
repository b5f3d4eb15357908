use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ServeError;

/// Environment variable naming the service configuration file.
pub const CONFIG_ENV: &str = "WINDCOMFORT_CONFIG";

/// Smallest raster side the service must accept.
pub const MIN_MAX_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// `host:port`; port 0 picks a free port.
    pub bind: String,
    /// Checkpoint path by model name.
    pub models: BTreeMap<String, PathBuf>,
    /// Largest accepted raster side in pixels.
    pub max_size: usize,
    pub timeout_s: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            models: BTreeMap::new(),
            max_size: 512,
            timeout_s: 60,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServeError> {
        if self.models.is_empty() {
            return Err(ServeError::Config("at least one checkpoint is required".into()));
        }
        if self.max_size < MIN_MAX_SIZE {
            return Err(ServeError::Config(format!("max_size {} below {MIN_MAX_SIZE}", self.max_size)));
        }
        if self.timeout_s == 0 {
            return Err(ServeError::Config("timeout_s must be positive".into()));
        }
        Ok(())
    }

    /// Read a JSON configuration file.
    pub fn from_file(path: &Path) -> Result<Self, ServeError> {
        let bytes = std::fs::read(path).map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration from the file named by `WINDCOMFORT_CONFIG`.
    pub fn from_env() -> Result<Self, ServeError> {
        let path = std::env::var_os(CONFIG_ENV).ok_or_else(|| ServeError::Config(format!("{CONFIG_ENV} is not set")))?;
        Self::from_file(Path::new(&path))
    }

    /// Request body limit that admits a full-size geometry raster as base64.
    pub fn body_limit(&self) -> usize {
        let raster = self.max_size * self.max_size * 4 * 4;
        raster / 3 * 4 + (1 << 20)
    }
}
