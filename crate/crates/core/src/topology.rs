//! Merging traceroute paths into a router-level graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{TopologyGraph, TracerouteResult};

/// One collected route: the probing source and what traceroute saw.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectedRoute {
    pub source: String,
    pub trace: TracerouteResult,
}

/// Builds the graph from a set of routes.
///
/// Each route is read as `source, hop1, hop2, ...` with the source at RTT 0.
/// Consecutive known addresses become a directed edge. An edge's delay is the
/// mean of the positive RTT differences observed across it; edges never seen
/// with a positive difference carry no delay. Unknown hops break the chain.
pub fn merge_routes(routes: &[CollectedRoute]) -> TopologyGraph {
    let mut g = TopologyGraph::default();
    let mut samples: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for route in routes {
        g.nodes.insert(route.source.clone());
        let mut prev: Option<(String, Option<f64>)> = Some((route.source.clone(), Some(0.0)));
        for hop in &route.trace.hops {
            let Some(addr) = hop.address.clone() else {
                prev = None;
                continue;
            };
            g.nodes.insert(addr.clone());
            if let Some((from, from_rtt)) = prev.take() {
                if from != addr {
                    let key = (from, addr.clone());
                    g.edges.insert(key.clone());
                    if let (Some(a), Some(b)) = (from_rtt, hop.rtt_ms) {
                        if b - a > 0.0 {
                            samples.entry(key).or_default().push(b - a);
                        }
                    }
                }
            }
            prev = Some((addr, hop.rtt_ms));
        }
    }
    g.per_edge_delay_ms = samples
        .into_iter()
        .map(|(k, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (k, mean)
        })
        .collect();
    g
}

/// One row of the processed edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EdgeRow {
    pub from: String,
    pub to: String,
    /// Empty when no positive RTT difference was observed.
    pub delay_ms: Option<f64>,
}

pub fn edge_rows(g: &TopologyGraph) -> Vec<EdgeRow> {
    g.edges
        .iter()
        .map(|(from, to)| EdgeRow {
            from: from.clone(),
            to: to.clone(),
            delay_ms: g.per_edge_delay_ms.get(&(from.clone(), to.clone())).copied(),
        })
        .collect()
}

pub fn graph_from_edge_rows(rows: &[EdgeRow]) -> TopologyGraph {
    let mut g = TopologyGraph::default();
    for r in rows {
        g.nodes.insert(r.from.clone());
        g.nodes.insert(r.to.clone());
        g.edges.insert((r.from.clone(), r.to.clone()));
        if let Some(d) = r.delay_ms {
            g.per_edge_delay_ms.insert((r.from.clone(), r.to.clone()), d);
        }
    }
    g
}

/// Mean and population standard deviation.
pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary of a topology run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopologySummary {
    pub routes: usize,
    pub route_length_mean: f64,
    pub route_length_stdev: f64,
    pub nodes: usize,
    pub edges: usize,
    pub links_with_delay: usize,
    pub delay_mean_ms: f64,
    pub delay_stdev_ms: f64,
}

impl TopologySummary {
    /// `route_lengths` are hop counts per collected route.
    pub fn new(route_lengths: &[usize], g: &TopologyGraph) -> Self {
        let lengths: Vec<f64> = route_lengths.iter().map(|&l| l as f64).collect();
        let (route_length_mean, route_length_stdev) = mean_stdev(&lengths);
        let delays: Vec<f64> = g.per_edge_delay_ms.values().copied().collect();
        let (delay_mean_ms, delay_stdev_ms) = mean_stdev(&delays);
        Self {
            routes: route_lengths.len(),
            route_length_mean,
            route_length_stdev,
            nodes: g.nodes.len(),
            edges: g.edges.len(),
            links_with_delay: delays.len(),
            delay_mean_ms,
            delay_stdev_ms,
        }
    }

    /// Human-readable block, one `key: value` per line.
    pub fn render(&self) -> String {
        format!(
            "routes: {}\nroute length mean: {:.3}\nroute length stdev: {:.3}\nnodes: {}\nedges: {}\nlinks with delay: {}\ndelay mean ms: {:.3}\ndelay stdev ms: {:.3}\n",
            self.routes,
            self.route_length_mean,
            self.route_length_stdev,
            self.nodes,
            self.edges,
            self.links_with_delay,
            self.delay_mean_ms,
            self.delay_stdev_ms,
        )
    }
}
