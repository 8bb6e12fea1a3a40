//! Parameter screening against the global policy and per-agent gray lists.

use std::net::{IpAddr, SocketAddr};

use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use sonoma_core::model::{GrayList, TaskSpec};
use sonoma_core::simnet::chirp_send_offsets;
use sonoma_core::{Error, ErrorCode, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SecurityPolicy {
    pub max_probe_rate_pps: u64,
    pub max_packet_bytes: u32,
    pub max_count: u32,
    #[serde(default = "default_denied")]
    pub denied_target_prefixes: Vec<IpNet>,
}

fn default_denied() -> Vec<IpNet> {
    ["224.0.0.0/4", "255.255.255.255/32", "ff00::/8"]
        .iter()
        .map(|s| s.parse().expect("static prefix"))
        .collect()
}

impl Default for SecurityPolicy {
    fn default() -> Self {
        Self {
            max_probe_rate_pps: 100_000,
            max_packet_bytes: 9000,
            max_count: 1000,
            denied_target_prefixes: default_denied(),
        }
    }
}

fn rejected(msg: String) -> Error {
    Error::new(ErrorCode::SecurityRejected, msg)
}

/// Leading IP of `host` or `host:port`, if it is one.
fn ip_of(target: &str) -> Option<IpAddr> {
    target
        .parse::<IpAddr>()
        .ok()
        .or_else(|| target.parse::<SocketAddr>().ok().map(|s| s.ip()))
}

/// Peak packets per second a task emits. `sender_line_rate_mbps` paces
/// trains.
pub fn peak_rate_pps(spec: &TaskSpec, sender_line_rate_mbps: f64) -> f64 {
    match spec {
        TaskSpec::Ping(p) => {
            if p.count <= 1 {
                1.0
            } else if p.interval_sec > 0.0 {
                1.0 / p.interval_sec
            } else {
                f64::INFINITY
            }
        }
        TaskSpec::Traceroute(_) => 1.0,
        TaskSpec::ChirpSend(c) | TaskSpec::Capture(sonoma_core::model::CaptureParams { chirp: c, .. }) => {
            let offs = chirp_send_offsets(c.n_packets, c.initial_gap_us, c.gap_ratio);
            let min_gap = offs.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(i64::MAX);
            1e6 / min_gap as f64
        }
        TaskSpec::TrainSend(t) | TaskSpec::TrainRecv(sonoma_core::model::TrainRecvParams { train: t, .. }) => {
            sender_line_rate_mbps * 1e6 / (f64::from(t.size_bytes) * 8.0)
        }
    }
}

impl SecurityPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_probe_rate_pps == 0 || self.max_packet_bytes == 0 || self.max_count == 0 {
            return Err(Error::param("security caps must be positive"));
        }
        Ok(())
    }

    pub fn check_target(&self, target: &str) -> Result<()> {
        if let Some(ip) = ip_of(target) {
            if let Some(net) = self.denied_target_prefixes.iter().find(|n| n.contains(&ip)) {
                return Err(rejected(format!("target {target} lies in denied prefix {net}")));
            }
        }
        Ok(())
    }

    /// Checks one task against the policy and the executing agent's gray
    /// list. Targets must already be resolved to addresses.
    pub fn check_task(&self, spec: &TaskSpec, gray: Option<&GrayList>, sender_line_rate_mbps: f64) -> Result<()> {
        let count = match spec {
            TaskSpec::Ping(p) => p.count,
            TaskSpec::ChirpSend(c) => c.n_packets,
            TaskSpec::Capture(c) => c.chirp.n_packets,
            TaskSpec::TrainSend(t) => t.n_packets,
            TaskSpec::TrainRecv(t) => t.train.n_packets,
            TaskSpec::Traceroute(_) => 1,
        };
        if count > self.max_count {
            return Err(rejected(format!("count {count} exceeds {}", self.max_count)));
        }
        let size = spec.packet_bytes();
        let size_cap = gray.map_or(self.max_packet_bytes, |g| g.max_packet_bytes.min(self.max_packet_bytes));
        if size > size_cap {
            return Err(rejected(format!("packet size {size} exceeds {size_cap}")));
        }
        let rate = peak_rate_pps(spec, sender_line_rate_mbps);
        let rate_cap = gray.map_or(self.max_probe_rate_pps, |g| g.max_probe_rate_pps.min(self.max_probe_rate_pps));
        if rate > rate_cap as f64 {
            return Err(rejected(format!("peak probe rate {rate:.0} pps exceeds {rate_cap}")));
        }
        match spec {
            TaskSpec::Ping(p) => self.check_target(&p.target),
            TaskSpec::Traceroute(p) => self.check_target(&p.target),
            TaskSpec::ChirpSend(c) => self.check_target(&c.destination),
            TaskSpec::TrainSend(t) => t.destinations.iter().try_for_each(|d| self.check_target(d)),
            TaskSpec::Capture(_) | TaskSpec::TrainRecv(_) => Ok(()),
        }
    }
}
