use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sonoma_core::model::Capability;
use sonoma_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    Sim,
    Real,
}

/// Settings of the socket backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RealSettings {
    /// Address advertised to the management layer and used as probe source.
    pub address: String,
    /// UDP port for echo replies and probe capture.
    pub probe_port: u16,
    #[serde(default = "default_line_rate")]
    pub line_rate_mbps: f64,
}

fn default_line_rate() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentConfig {
    pub node_id: String,
    pub listen_address: String,
    /// Base URL of the management layer; `/callback` is appended.
    #[serde(default)]
    pub ml_callback_url: Option<String>,
    pub backend: BackendKind,
    #[serde(default)]
    pub topology_path: Option<PathBuf>,
    pub capabilities: BTreeSet<Capability>,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent_time_sharing: usize,
    /// Wall-clock seconds per simulated second when replaying simulated
    /// probes.
    #[serde(default = "default_time_scale")]
    pub sim_time_scale: f64,
    /// Delays between callback attempts.
    #[serde(default = "default_backoff")]
    pub callback_backoff_ms: Vec<u64>,
    #[serde(default)]
    pub real: Option<RealSettings>,
}

fn default_max_concurrent() -> usize {
    8
}

fn default_time_scale() -> f64 {
    1.0
}

pub fn default_backoff() -> Vec<u64> {
    vec![1_000, 4_000, 16_000]
}

impl AgentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: AgentConfig =
            serde_json::from_str(&text).map_err(|e| Error::param(format!("bad agent config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capabilities.is_empty() {
            return Err(Error::param("an agent needs at least one capability"));
        }
        if self.max_concurrent_time_sharing == 0 {
            return Err(Error::param("maxConcurrentTimeSharing must be positive"));
        }
        if !(self.sim_time_scale >= 0.0) {
            return Err(Error::param("simTimeScale must be non-negative"));
        }
        match self.backend {
            BackendKind::Sim => {
                if self.topology_path.is_none() {
                    return Err(Error::param("the SIM backend requires topologyPath"));
                }
            }
            BackendKind::Real => {
                if self.real.is_none() {
                    return Err(Error::param("the REAL backend requires a `real` section"));
                }
                let unsupported: Vec<_> = self
                    .capabilities
                    .iter()
                    .filter(|c| !crate::backend::real::SUPPORTED.contains(c))
                    .collect();
                if !unsupported.is_empty() {
                    return Err(Error::param(format!(
                        "the REAL backend cannot provide {unsupported:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}
