//! Known agents, their last capability report and health.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use sonoma_core::api::{AgentAccounting, AgentRegistration, CapabilitiesResponse};
use sonoma_core::model::{Capability, GrayList, NodeDescriptor, NodeStatus};
use sonoma_core::{Error, ErrorCode, Result};

#[derive(Debug, Clone)]
pub struct AgentEntry {
    pub node_id: String,
    pub url: String,
    pub gray_list: Option<GrayList>,
    /// Last successful capability report.
    pub report: Option<CapabilitiesResponse>,
    pub consecutive_misses: u32,
    pub tasks_dispatched: u64,
}

/// A usable agent as seen at lookup time.
#[derive(Debug, Clone)]
pub struct AgentView {
    pub node_id: String,
    pub url: String,
    pub address: String,
    pub line_rate_mbps: f64,
    pub capabilities: std::collections::BTreeSet<Capability>,
    pub gray_list: Option<GrayList>,
}

impl AgentView {
    pub fn require(&self, cap: Capability) -> Result<()> {
        if self.capabilities.contains(&cap) {
            Ok(())
        } else {
            Err(Error::new(
                ErrorCode::CapabilityMissing,
                format!("{} lacks {cap:?}", self.node_id),
            ))
        }
    }
}

pub struct Registry {
    miss_limit: u32,
    agents: Mutex<BTreeMap<String, AgentEntry>>,
}

pub fn load_registrations(path: impl AsRef<Path>) -> Result<Vec<AgentRegistration>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| Error::param(format!("bad agent registry: {e}")))
}

impl Registry {
    pub fn new(miss_limit: u32) -> Self {
        Self {
            miss_limit,
            agents: Mutex::default(),
        }
    }

    /// Adds or replaces an agent. It stays unlisted until a probe succeeds.
    pub fn register(&self, r: AgentRegistration) {
        let mut agents = self.agents.lock().unwrap();
        let dispatched = agents.get(&r.node_id).map_or(0, |e| e.tasks_dispatched);
        agents.insert(
            r.node_id.clone(),
            AgentEntry {
                node_id: r.node_id,
                url: r.url.trim_end_matches('/').to_owned(),
                gray_list: r.gray_list,
                report: None,
                consecutive_misses: 0,
                tasks_dispatched: dispatched,
            },
        );
    }

    pub fn targets(&self) -> Vec<(String, String)> {
        self.agents
            .lock()
            .unwrap()
            .values()
            .map(|e| (e.node_id.clone(), e.url.clone()))
            .collect()
    }

    pub fn record_probe(&self, node_id: &str, outcome: Result<CapabilitiesResponse>) {
        let mut agents = self.agents.lock().unwrap();
        let Some(e) = agents.get_mut(node_id) else { return };
        match outcome {
            Ok(report) => {
                e.report = Some(report);
                e.consecutive_misses = 0;
            }
            Err(err) => {
                e.consecutive_misses += 1;
                tracing::debug!(node = node_id, misses = e.consecutive_misses, "health probe failed: {err}");
            }
        }
    }

    fn usable(&self, e: &AgentEntry) -> bool {
        e.report.is_some() && e.consecutive_misses < self.miss_limit
    }

    fn descriptor(&self, e: &AgentEntry) -> Option<NodeDescriptor> {
        let r = e.report.as_ref()?;
        Some(NodeDescriptor {
            node_id: e.node_id.clone(),
            address: r.address.clone(),
            capabilities: r.capabilities.clone(),
            status: if self.usable(e) { r.status } else { NodeStatus::Offline },
            gray_list_constraints: e.gray_list,
        })
    }

    /// Live agents, optionally restricted to one capability.
    pub fn node_list(&self, filter: Option<Capability>) -> Vec<NodeDescriptor> {
        self.agents
            .lock()
            .unwrap()
            .values()
            .filter(|e| self.usable(e))
            .filter_map(|e| self.descriptor(e))
            .filter(|d| filter.is_none_or(|c| d.capabilities.contains(&c)))
            .collect()
    }

    /// Finds an agent by node id or address.
    pub fn lookup(&self, name: &str) -> Result<AgentView> {
        let agents = self.agents.lock().unwrap();
        let e = agents
            .get(name)
            .or_else(|| {
                agents
                    .values()
                    .find(|e| e.report.as_ref().is_some_and(|r| r.address == name))
            })
            .ok_or_else(|| Error::new(ErrorCode::UnknownNode, format!("no agent {name:?}")))?;
        let Some(r) = e.report.as_ref().filter(|_| self.usable(e)) else {
            return Err(Error::new(ErrorCode::NodeUnavailable, format!("agent {} is offline", e.node_id)));
        };
        Ok(AgentView {
            node_id: e.node_id.clone(),
            url: e.url.clone(),
            address: r.address.clone(),
            line_rate_mbps: r.line_rate_mbps,
            capabilities: r.capabilities.clone(),
            gray_list: e.gray_list,
        })
    }

    /// Address of a registered agent, or `name` itself for plain targets.
    pub fn resolve_target(&self, name: &str) -> String {
        match self.lookup(name) {
            Ok(v) => v.address,
            Err(_) => {
                let agents = self.agents.lock().unwrap();
                agents
                    .get(name)
                    .and_then(|e| e.report.as_ref())
                    .map_or_else(|| name.to_owned(), |r| r.address.clone())
            }
        }
    }

    pub fn count_dispatch(&self, node_id: &str) {
        if let Some(e) = self.agents.lock().unwrap().get_mut(node_id) {
            e.tasks_dispatched += 1;
        }
    }

    pub fn accounting(&self) -> Vec<AgentAccounting> {
        self.agents
            .lock()
            .unwrap()
            .values()
            .map(|e| AgentAccounting {
                node_id: e.node_id.clone(),
                tasks_dispatched: e.tasks_dispatched,
            })
            .collect()
    }
}
