use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sonoma_core::{Error, Result};

use crate::auth::Quotas;
use crate::security::SecurityPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MlConfig {
    pub listen_address: String,
    /// JSON list of agent registrations loaded at startup.
    #[serde(default)]
    pub agent_registry_path: Option<PathBuf>,
    /// JSON account store; without one only guests can log in.
    #[serde(default)]
    pub accounts_path: Option<PathBuf>,
    pub vo_path: PathBuf,
    #[serde(default)]
    pub security_policy: SecurityPolicy,
    #[serde(default)]
    pub quotas: Quotas,
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default = "default_health_interval")]
    pub health_interval_sec: f64,
    /// Consecutive failed probes after which an agent is OFFLINE.
    #[serde(default = "default_health_misses")]
    pub health_miss_limit: u32,
}

fn default_version() -> String {
    env!("CARGO_PKG_VERSION").to_owned()
}

fn default_health_interval() -> f64 {
    10.0
}

fn default_health_misses() -> u32 {
    3
}

impl MlConfig {
    pub fn new(listen_address: impl Into<String>, vo_path: impl Into<PathBuf>) -> Self {
        Self {
            listen_address: listen_address.into(),
            agent_registry_path: None,
            accounts_path: None,
            vo_path: vo_path.into(),
            security_policy: SecurityPolicy::default(),
            quotas: Quotas::default(),
            version: default_version(),
            health_interval_sec: default_health_interval(),
            health_miss_limit: default_health_misses(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: MlConfig = serde_json::from_str(&text).map_err(|e| Error::param(format!("bad ML config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.security_policy.validate()?;
        self.quotas.validate()?;
        if !(self.health_interval_sec > 0.0) || self.health_miss_limit == 0 {
            return Err(Error::param("health checking needs a positive interval and miss limit"));
        }
        Ok(())
    }
}
