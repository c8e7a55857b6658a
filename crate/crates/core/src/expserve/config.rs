//! TOML configuration of the service.
//!
//! ```toml
//! listen = "127.0.0.1:8080"       # address to bind
//! data_dir = "./data"             # event logs and snapshot files
//! default_levels = [0.9, 0.95, 0.99]
//! default_tau_sq = 1.0
//! snapshot_every = 1000           # events between snapshot files, 0 = off
//! fsync = true                    # sync every appended event
//! ```
//!
//! Every key is optional. `ALWAYSVALID_LISTEN` and `ALWAYSVALID_DATA_DIR`
//! override the address and the data directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ServiceOptions;
use crate::avcore::{validate_levels, DEFAULT_LEVELS};

pub const ENV_LISTEN: &str = "ALWAYSVALID_LISTEN";
pub const ENV_DATA_DIR: &str = "ALWAYSVALID_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub default_levels: Vec<f64>,
    pub default_tau_sq: f64,
    pub snapshot_every: u64,
    pub fsync: bool,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("./data"),
            default_levels: DEFAULT_LEVELS.to_vec(),
            default_tau_sq: 1.0,
            snapshot_every: 1000,
            fsync: true,
        }
    }
}

impl ServeConfig {
    /// Defaults, then the file if given, then the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
                toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?
            }
            None => Self::default(),
        };
        let config = config.with_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(listen) = lookup(ENV_LISTEN) {
            self.listen = listen;
        }
        if let Some(dir) = lookup(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_levels(&self.default_levels).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.default_tau_sq.is_finite() && self.default_tau_sq > 0.0) {
            return Err(ConfigError::Invalid(format!("default_tau_sq must be > 0, got {}", self.default_tau_sq)));
        }
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            return Err(ConfigError::Invalid(format!("listen must be host:port, got {:?}", self.listen)));
        }
        Ok(())
    }

    pub fn service_options(&self) -> ServiceOptions {
        ServiceOptions {
            data_dir: self.data_dir.clone(),
            default_levels: self.default_levels.clone(),
            default_tau_sq: self.default_tau_sq,
            snapshot_every: self.snapshot_every,
            sync: self.fsync,
        }
    }
}
