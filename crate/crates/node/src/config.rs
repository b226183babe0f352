//! Node configuration, read from a TOML file.
//!
//! ```toml
//! listen = "127.0.0.1:7070"
//! vault_dir = "/home/me/.datavault"
//! registry_url = "http://127.0.0.1:7080"
//! bootstrap = ["127.0.0.1:7071"]
//! token_ttl_secs = 300
//! transport = "udp"            # or "simulated"
//! admin_port = 7090
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use datavault_core::atrest::DEFAULT_ITERATIONS;
use datavault_core::token::DEFAULT_TTL_SECS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    #[default]
    Udp,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub listen: SocketAddr,
    pub vault_dir: PathBuf,
    /// Empty means no registry: presentations cannot be verified.
    pub registry_url: String,
    pub bootstrap: Vec<SocketAddr>,
    pub token_ttl_secs: u64,
    pub transport: TransportMode,
    /// The admin API always binds 127.0.0.1. 0 picks a free port.
    pub admin_port: u16,
    pub announce_interval_ms: u64,
    pub peer_timeout_ms: u64,
    pub kdf_iterations: u32,
    pub cache_capacity: usize,
    pub registry_cache_ttl_secs: u64,
    pub request_timeout_ms: u64,
    /// Static files of the web UI, served by the admin port.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub webui_dir: Option<PathBuf>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7070".parse().expect("valid literal"),
            vault_dir: PathBuf::from("vault"),
            registry_url: String::new(),
            bootstrap: Vec::new(),
            token_ttl_secs: DEFAULT_TTL_SECS,
            transport: TransportMode::Udp,
            admin_port: 7090,
            announce_interval_ms: 1000,
            peer_timeout_ms: 5000,
            kdf_iterations: DEFAULT_ITERATIONS,
            cache_capacity: 64,
            registry_cache_ttl_secs: 60,
            request_timeout_ms: 60_000,
            webui_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl NodeConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let mut cfg: NodeConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })?;
        if let Some(base) = path.parent() {
            if cfg.vault_dir.is_relative() {
                cfg.vault_dir = base.join(&cfg.vault_dir);
            }
            if let Some(dir) = cfg.webui_dir.as_mut().filter(|d| d.is_relative()) {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_ttl_secs == 0 {
            return Err(ConfigError::Invalid("token_ttl_secs must be positive".into()));
        }
        if self.kdf_iterations == 0 {
            return Err(ConfigError::Invalid("kdf_iterations must be positive".into()));
        }
        if self.cache_capacity == 0 {
            return Err(ConfigError::Invalid("cache_capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }
}
