use sonoma_core::estimator::{CapturedPacket, SentPacket};
use sonoma_core::model::{CaptureParams, ChirpParams, Row, TaskSpec, TrainParams, TrainRecvParams};
use sonoma_core::rows::{ping_rows, to_rows, traceroute_rows, TrainCapturedRow, TrainSentRow};
use sonoma_core::simnet::{ping_probes, simulate_chirp, simulate_traceroute, simulate_train, SimTopology};
use sonoma_core::{Error, ErrorCode, Result};

/// Seconds a lost probe is waited for before it counts as a timeout.
pub const PROBE_TIMEOUT_SEC: f64 = 1.0;

pub struct SimBackend {
    topo: SimTopology,
    address: String,
    line_rate_mbps: f64,
}

impl SimBackend {
    pub fn new(topo: SimTopology, node_id: &str) -> Result<Self> {
        let node = topo
            .node(node_id)
            .ok_or_else(|| Error::new(ErrorCode::UnknownNode, format!("{node_id} is not in the topology")))?;
        Ok(Self {
            address: node.ip_address.clone(),
            line_rate_mbps: node.line_rate_mbps,
            topo,
        })
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn line_rate_mbps(&self) -> f64 {
        self.line_rate_mbps
    }

    pub fn line_rate_of(&self, name: &str) -> Option<f64> {
        let addr = self.resolve(name);
        self.topo.node_by_address(&addr).map(|n| n.line_rate_mbps)
    }

    /// Node ids are accepted wherever an address is expected.
    fn resolve(&self, name: &str) -> String {
        match self.topo.node(name) {
            Some(n) => n.ip_address.clone(),
            None => name.to_owned(),
        }
    }

    fn resolve_chirp(&self, p: &ChirpParams) -> ChirpParams {
        ChirpParams {
            destination: self.resolve(&p.destination),
            ..p.clone()
        }
    }

    fn resolve_train(&self, p: &TrainParams) -> TrainParams {
        TrainParams {
            destinations: p.destinations.iter().map(|d| self.resolve(d)).collect(),
            ..p.clone()
        }
    }

    /// All rows of the task with their release offsets in simulated seconds.
    /// Offsets are non-decreasing, so playback preserves row order.
    pub fn prepare(&self, spec: &TaskSpec) -> Result<Vec<(f64, Row)>> {
        let me = self.address.as_str();
        let timed: Vec<(f64, Row)> = match spec {
            TaskSpec::Ping(p) => {
                if !(p.interval_sec >= 0.0) {
                    return Err(Error::param("interval must be non-negative"));
                }
                let target = self.resolve(&p.target);
                let probes = ping_probes(&self.topo, me, &target, p.count, p.size_bytes, p.seed)?;
                let offsets = probes
                    .iter()
                    .enumerate()
                    .map(|(i, rtt)| i as f64 * p.interval_sec + rtt.map_or(PROBE_TIMEOUT_SEC, |ms| ms / 1000.0));
                zip_rows(offsets, to_rows(&ping_rows(me, &target, p.size_bytes, &probes)))
            }
            TaskSpec::Traceroute(p) => {
                let target = self.resolve(&p.target);
                let result = simulate_traceroute(&self.topo, me, &target, p.size_bytes, p.seed)?;
                let offsets = result.hops.iter().scan(0.0, |t, h| {
                    *t += h.rtt_ms.map_or(PROBE_TIMEOUT_SEC, |ms| ms / 1000.0);
                    Some(*t)
                });
                zip_rows(offsets, to_rows(&traceroute_rows(me, &result)))
            }
            TaskSpec::ChirpSend(p) => {
                let recs = simulate_chirp(&self.topo, me, &self.resolve_chirp(p))?;
                let sent: Vec<SentPacket> = recs
                    .iter()
                    .map(|r| SentPacket {
                        packet_index: r.packet_index,
                        send_timestamp_us: r.send_timestamp_us,
                        size_bytes: r.size_bytes,
                    })
                    .collect();
                zip_rows(sent.iter().map(|s| us(s.send_timestamp_us)), to_rows(&sent))
            }
            TaskSpec::Capture(CaptureParams { source, chirp }) => {
                let chirp = self.resolve_chirp(chirp);
                if chirp.destination != me {
                    return Err(Error::param(format!(
                        "capture for {} cannot run on {me}",
                        chirp.destination
                    )));
                }
                let recs = simulate_chirp(&self.topo, &self.resolve(source), &chirp)?;
                let got: Vec<CapturedPacket> = recs
                    .iter()
                    .filter_map(|r| {
                        r.recv_timestamp_us.map(|recv| CapturedPacket {
                            packet_index: r.packet_index,
                            recv_timestamp_us: recv,
                        })
                    })
                    .collect();
                zip_rows(got.iter().map(|c| us(c.recv_timestamp_us)), to_rows(&got))
            }
            TaskSpec::TrainSend(p) => {
                let recs = simulate_train(&self.topo, me, &self.resolve_train(p))?;
                let sent: Vec<TrainSentRow> = recs
                    .into_iter()
                    .map(|r| TrainSentRow {
                        packet_index: r.packet_index,
                        send_timestamp_us: r.send_timestamp_us,
                        size_bytes: r.size_bytes,
                        destination: r.destination,
                    })
                    .collect();
                zip_rows(sent.iter().map(|s| us(s.send_timestamp_us)), to_rows(&sent))
            }
            TaskSpec::TrainRecv(TrainRecvParams { source, train }) => {
                let train = self.resolve_train(train);
                if !train.destinations.iter().any(|d| d == me) {
                    return Err(Error::param(format!("{me} is not a destination of this train")));
                }
                let recs = simulate_train(&self.topo, &self.resolve(source), &train)?;
                // per-destination FIFO: arrival order is packet order
                let got: Vec<TrainCapturedRow> = recs
                    .into_iter()
                    .filter(|r| r.destination == me)
                    .filter_map(|r| {
                        r.recv_timestamp_us.map(|recv| TrainCapturedRow {
                            packet_index: r.packet_index,
                            recv_timestamp_us: recv,
                            destination: r.destination,
                        })
                    })
                    .collect();
                zip_rows(got.iter().map(|c| us(c.recv_timestamp_us)), to_rows(&got))
            }
        };
        Ok(timed)
    }
}

fn us(t: i64) -> f64 {
    t as f64 / 1e6
}

fn zip_rows(offsets: impl Iterator<Item = f64>, rows: Vec<Row>) -> Vec<(f64, Row)> {
    let mut latest: f64 = 0.0;
    offsets
        .zip(rows)
        .map(|(t, r)| {
            latest = latest.max(t);
            (latest, r)
        })
        .collect()
}
