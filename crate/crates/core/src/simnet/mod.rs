//! Deterministic simulated network.
//!
//! A [`SimTopology`] is a directed graph of nodes and links. Routing is
//! minimum-hop with ties broken by the lexicographically smallest node-id
//! sequence. Every probe function in [`probes`] is a pure function of the
//! topology, its parameters and a seed.

mod probes;
mod rng;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorCode, Result};

pub use probes::{
    chirp_send_offsets, ground_truth_available_bandwidth, ping_probes, simulate_chirp,
    simulate_ping, simulate_train, simulate_traceroute, MAX_PACKET_BYTES, MAX_TTL,
    MIN_PACKET_BYTES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimNode {
    pub node_id: String,
    pub ip_address: String,
    pub line_rate_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimLink {
    pub from: String,
    pub to: String,
    pub delay_ms: f64,
    pub capacity_mbps: f64,
    #[serde(default)]
    pub cross_traffic_mbps: f64,
    /// Per-traversal drop probability.
    #[serde(default)]
    pub loss: f64,
}

impl SimLink {
    pub fn available_mbps(&self) -> f64 {
        self.capacity_mbps - self.cross_traffic_mbps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTopologyFile {
    pub nodes: Vec<SimNode>,
    pub links: Vec<SimLink>,
}

/// A validated topology with lookup indexes.
///
/// Links are directed; a physical duplex link is two entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SimTopologyFile", into = "SimTopologyFile")]
pub struct SimTopology {
    nodes: Vec<SimNode>,
    links: Vec<SimLink>,
    by_id: HashMap<String, usize>,
    by_addr: HashMap<String, usize>,
    // node index -> (neighbour node index, link index), sorted by neighbour id
    out: Vec<Vec<(usize, usize)>>,
    link_index: HashMap<(usize, usize), usize>,
}

/// Ordered node ids from source to destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimRoute(pub Vec<String>);

impl SimRoute {
    pub fn hop_count(&self) -> usize {
        self.0.len().saturating_sub(1)
    }
}

impl TryFrom<SimTopologyFile> for SimTopology {
    type Error = Error;

    fn try_from(file: SimTopologyFile) -> Result<Self> {
        SimTopology::new(file.nodes, file.links)
    }
}

impl From<SimTopology> for SimTopologyFile {
    fn from(t: SimTopology) -> Self {
        SimTopologyFile {
            nodes: t.nodes,
            links: t.links,
        }
    }
}

impl SimTopology {
    pub fn new(nodes: Vec<SimNode>, links: Vec<SimLink>) -> Result<Self> {
        let mut by_id = HashMap::new();
        let mut by_addr = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.ip_address.parse::<std::net::IpAddr>().is_err() {
                return Err(Error::param(format!(
                    "node {} has invalid address {:?}",
                    n.node_id, n.ip_address
                )));
            }
            if !(n.line_rate_mbps > 0.0) {
                return Err(Error::param(format!("node {} needs a positive line rate", n.node_id)));
            }
            if by_id.insert(n.node_id.clone(), i).is_some() {
                return Err(Error::param(format!("duplicate node id {}", n.node_id)));
            }
            if by_addr.insert(n.ip_address.clone(), i).is_some() {
                return Err(Error::param(format!("duplicate address {}", n.ip_address)));
            }
        }

        let mut out = vec![Vec::new(); nodes.len()];
        let mut link_index = HashMap::new();
        for (li, l) in links.iter().enumerate() {
            let (Some(&a), Some(&b)) = (by_id.get(&l.from), by_id.get(&l.to)) else {
                return Err(Error::param(format!(
                    "link {}->{} references an unknown node",
                    l.from, l.to
                )));
            };
            if a == b {
                return Err(Error::param(format!("self loop on {}", l.from)));
            }
            if !(l.delay_ms > 0.0) || !(l.capacity_mbps > 0.0) {
                return Err(Error::param(format!(
                    "link {}->{} needs positive delay and capacity",
                    l.from, l.to
                )));
            }
            if !(l.cross_traffic_mbps >= 0.0 && l.cross_traffic_mbps < l.capacity_mbps) {
                return Err(Error::param(format!(
                    "link {}->{} cross traffic must be in [0, capacity)",
                    l.from, l.to
                )));
            }
            if !(0.0..=1.0).contains(&l.loss) {
                return Err(Error::param(format!(
                    "link {}->{} loss must be a probability",
                    l.from, l.to
                )));
            }
            if link_index.insert((a, b), li).is_some() {
                return Err(Error::param(format!("duplicate link {}->{}", l.from, l.to)));
            }
            out[a].push((b, li));
        }
        for adj in &mut out {
            adj.sort_by(|x, y| nodes[x.0].node_id.cmp(&nodes[y.0].node_id));
        }

        Ok(Self {
            nodes,
            links,
            by_id,
            by_addr,
            out,
            link_index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::param(format!("bad topology file: {e}")))
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    pub fn links(&self) -> &[SimLink] {
        &self.links
    }

    pub fn node(&self, node_id: &str) -> Option<&SimNode> {
        self.by_id.get(node_id).map(|&i| &self.nodes[i])
    }

    pub fn node_by_address(&self, address: &str) -> Option<&SimNode> {
        self.by_addr.get(address).map(|&i| &self.nodes[i])
    }

    pub fn link(&self, from: &str, to: &str) -> Option<&SimLink> {
        let a = *self.by_id.get(from)?;
        let b = *self.by_id.get(to)?;
        self.link_index.get(&(a, b)).map(|&i| &self.links[i])
    }

    fn index_of_address(&self, address: &str) -> Result<usize> {
        self.by_addr.get(address).copied().ok_or_else(|| {
            Error::new(
                ErrorCode::UnknownAddress,
                format!("{address} is not a node of the topology"),
            )
        })
    }

    /// Minimum-hop route between two addresses.
    pub fn compute_route(&self, src: &str, dst: &str) -> Result<SimRoute> {
        let s = self.index_of_address(src)?;
        let d = self.index_of_address(dst)?;
        self.route_indices(s, d)
            .map(|r| SimRoute(r.into_iter().map(|i| self.nodes[i].node_id.clone()).collect()))
            .ok_or_else(|| Error::new(ErrorCode::NoRoute, format!("no route from {src} to {dst}")))
    }

    fn route_indices(&self, s: usize, d: usize) -> Option<Vec<usize>> {
        // Hop distance to the destination over reversed edges, then a greedy
        // walk picking the smallest-id neighbour that stays on a shortest path.
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (a, adj) in self.out.iter().enumerate() {
            for &(b, _) in adj {
                incoming[b].push(a);
            }
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[d] = 0;
        let mut queue = VecDeque::from([d]);
        while let Some(v) = queue.pop_front() {
            for &u in &incoming[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        if dist[s] == usize::MAX {
            return None;
        }
        let mut path = vec![s];
        let mut cur = s;
        while cur != d {
            let next = self.out[cur]
                .iter()
                .map(|&(b, _)| b)
                .find(|&b| dist[b] != usize::MAX && dist[b] + 1 == dist[cur])?;
            path.push(next);
            cur = next;
        }
        Some(path)
    }

    /// Links along a route, in order.
    pub(crate) fn route_links(&self, route: &SimRoute) -> Vec<&SimLink> {
        route
            .0
            .windows(2)
            .filter_map(|w| self.link(&w[0], &w[1]))
            .collect()
    }

    pub(crate) fn address_of(&self, node_id: &str) -> &str {
        &self.nodes[self.by_id[node_id]].ip_address
    }

    /// Every ordered pair route among the given addresses, keyed by (src, dst).
    pub fn all_routes(&self, addresses: &[String]) -> BTreeMap<(String, String), Result<SimRoute>> {
        let mut out = BTreeMap::new();
        for a in addresses {
            for b in addresses {
                if a != b {
                    out.insert((a.clone(), b.clone()), self.compute_route(a, b));
                }
            }
        }
        out
    }
}
