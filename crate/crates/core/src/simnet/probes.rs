use crate::error::{Error, ErrorCode, Result};
use crate::model::{ChirpParams, ChirpRecord, Hop, PingResult, TracerouteResult, TrainParams, TrainRecord};

use super::rng::LossDraws;
use super::{SimLink, SimTopology};

pub const MAX_TTL: u32 = 30;
pub const MIN_PACKET_BYTES: u32 = 28;
pub const MAX_PACKET_BYTES: u32 = 65535;

pub(crate) fn check_packet_size(size_bytes: u32) -> Result<()> {
    if (MIN_PACKET_BYTES..=MAX_PACKET_BYTES).contains(&size_bytes) {
        Ok(())
    } else {
        Err(Error::param(format!(
            "packet size {size_bytes} outside [{MIN_PACKET_BYTES}, {MAX_PACKET_BYTES}]"
        )))
    }
}

/// Per-direction transmission time of one packet on a link, in ms.
fn serialization_ms(size_bytes: u32, capacity_mbps: f64) -> f64 {
    f64::from(size_bytes) * 8.0 / (capacity_mbps * 1000.0)
}

fn round_trip_ms(links: &[&SimLink], size_bytes: u32) -> f64 {
    links
        .iter()
        .map(|l| 2.0 * (l.delay_ms + serialization_ms(size_bytes, l.capacity_mbps)))
        .sum()
}

/// Forward and (symmetric) return traversal; true if the probe survives.
fn survives_round_trip(links: &[&SimLink], draws: &mut LossDraws) -> bool {
    let mut alive = true;
    for l in links.iter().chain(links.iter().rev()) {
        if draws.drops(l.loss) {
            alive = false;
        }
    }
    alive
}

/// Per-probe outcome of a ping run: the RTT in ms, or `None` when lost.
/// An unreachable target loses every probe.
pub fn ping_probes(
    topo: &SimTopology,
    src: &str,
    dst: &str,
    count: u32,
    size_bytes: u32,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    if count == 0 {
        return Err(Error::param("ping count must be at least 1"));
    }
    check_packet_size(size_bytes)?;
    let route = match topo.compute_route(src, dst) {
        Ok(r) => r,
        Err(e) if e.code == ErrorCode::NoRoute => return Ok(vec![None; count as usize]),
        Err(e) => return Err(e),
    };
    let links = topo.route_links(&route);
    let rtt = round_trip_ms(&links, size_bytes);
    let mut draws = LossDraws::new(seed);
    Ok((0..count)
        .map(|_| survives_round_trip(&links, &mut draws).then_some(rtt))
        .collect())
}

pub fn simulate_ping(
    topo: &SimTopology,
    src: &str,
    dst: &str,
    count: u32,
    size_bytes: u32,
    seed: u64,
) -> Result<PingResult> {
    let rtt_ms: Vec<f64> = ping_probes(topo, src, dst, count, size_bytes, seed)?
        .into_iter()
        .flatten()
        .collect();
    Ok(PingResult {
        target: dst.to_owned(),
        sent: count,
        received: rtt_ms.len() as u32,
        rtt_ms,
        packet_size_bytes: size_bytes,
    })
}

pub fn simulate_traceroute(
    topo: &SimTopology,
    src: &str,
    dst: &str,
    size_bytes: u32,
    seed: u64,
) -> Result<TracerouteResult> {
    check_packet_size(size_bytes)?;
    let route = match topo.compute_route(src, dst) {
        Ok(r) => r,
        Err(e) if e.code == ErrorCode::NoRoute => {
            return Ok(TracerouteResult {
                target: dst.to_owned(),
                hops: (1..=MAX_TTL)
                    .map(|ttl| Hop {
                        ttl,
                        address: None,
                        rtt_ms: None,
                    })
                    .collect(),
            })
        }
        Err(e) => return Err(e),
    };
    let links = topo.route_links(&route);
    let mut draws = LossDraws::new(seed);
    let hops = (1..=links.len().min(MAX_TTL as usize))
        .map(|k| {
            let prefix = &links[..k];
            if survives_round_trip(prefix, &mut draws) {
                Hop {
                    ttl: k as u32,
                    address: Some(topo.address_of(&route.0[k]).to_owned()),
                    rtt_ms: Some(round_trip_ms(prefix, size_bytes)),
                }
            } else {
                Hop {
                    ttl: k as u32,
                    address: None,
                    rtt_ms: None,
                }
            }
        })
        .collect();
    Ok(TracerouteResult {
        target: dst.to_owned(),
        hops,
    })
}

/// Store-and-forward walk of one path with a single FIFO per link. Cross
/// traffic is fluid, so a probe is served at `capacity - cross` Mbps.
struct PathFifo<'a> {
    links: Vec<&'a SimLink>,
    free_at_us: Vec<f64>,
}

impl<'a> PathFifo<'a> {
    fn new(links: Vec<&'a SimLink>) -> Self {
        let free_at_us = vec![f64::NEG_INFINITY; links.len()];
        Self { links, free_at_us }
    }

    /// Arrival time at the far end, or `None` if dropped.
    fn transit(&mut self, send_us: f64, size_bytes: u32, draws: &mut LossDraws) -> Option<f64> {
        let bits = f64::from(size_bytes) * 8.0;
        let mut t = send_us;
        let mut alive = true;
        for (i, l) in self.links.iter().enumerate() {
            // a draw per link keeps the sequence independent of earlier drops
            if draws.drops(l.loss) {
                alive = false;
            }
            if !alive {
                continue;
            }
            let start = t.max(self.free_at_us[i]);
            let depart = start + bits / l.available_mbps();
            self.free_at_us[i] = depart;
            t = depart + l.delay_ms * 1000.0;
        }
        alive.then_some(t)
    }
}

/// Integer send offsets (µs from the first packet) of a chirp whose k-th gap
/// is `initial_gap_us * gap_ratio^(k-1)`. Gaps are rounded individually and
/// never drop below 1 µs, so offsets are strictly increasing.
pub fn chirp_send_offsets(n_packets: u32, initial_gap_us: f64, gap_ratio: f64) -> Vec<i64> {
    let mut out = Vec::with_capacity(n_packets as usize);
    let mut t = 0i64;
    out.push(t);
    for k in 1..n_packets {
        let gap = (initial_gap_us * gap_ratio.powi(k as i32 - 1)).round().max(1.0) as i64;
        t += gap;
        out.push(t);
    }
    out
}

pub(crate) fn check_chirp(p: &ChirpParams) -> Result<()> {
    if p.n_packets < 2 {
        return Err(Error::param("a chirp needs at least 2 packets"));
    }
    if !(p.gap_ratio > 0.0 && p.gap_ratio < 1.0) {
        return Err(Error::param(format!("gap ratio {} outside (0, 1)", p.gap_ratio)));
    }
    if !(p.initial_gap_us > 0.0) || !p.initial_gap_us.is_finite() {
        return Err(Error::param("initial gap must be positive"));
    }
    check_packet_size(p.size_bytes)
}

/// Chirp from `src` to `params.destination`. Timestamps are relative to the
/// first packet's emission.
pub fn simulate_chirp(topo: &SimTopology, src: &str, params: &ChirpParams) -> Result<Vec<ChirpRecord>> {
    check_chirp(params)?;
    let route = topo.compute_route(src, &params.destination)?;
    let mut fifo = PathFifo::new(topo.route_links(&route));
    let mut draws = LossDraws::new(params.seed);
    Ok(chirp_send_offsets(params.n_packets, params.initial_gap_us, params.gap_ratio)
        .into_iter()
        .enumerate()
        .map(|(i, send)| {
            let recv = fifo
                .transit(send as f64, params.size_bytes, &mut draws)
                .map(|t| send + (t - send as f64).round() as i64);
            ChirpRecord {
                packet_index: i as u32,
                send_timestamp_us: send,
                recv_timestamp_us: recv,
                size_bytes: params.size_bytes,
            }
        })
        .collect())
}

pub(crate) fn check_train(p: &TrainParams) -> Result<()> {
    if p.destinations.is_empty() {
        return Err(Error::param("a train needs at least one destination"));
    }
    if p.n_packets < 2 {
        return Err(Error::param("a train needs at least 2 packets"));
    }
    check_packet_size(p.size_bytes)
}

/// Back-to-back train at the source line rate, round-robin over the
/// destinations. Each destination path keeps its own FIFO state.
pub fn simulate_train(topo: &SimTopology, src: &str, params: &TrainParams) -> Result<Vec<TrainRecord>> {
    check_train(params)?;
    let src_node = topo.node_by_address(src).ok_or_else(|| {
        Error::new(ErrorCode::UnknownAddress, format!("{src} is not a node of the topology"))
    })?;
    let mut paths = params
        .destinations
        .iter()
        .map(|d| topo.compute_route(src, d).map(|r| PathFifo::new(topo.route_links(&r))))
        .collect::<Result<Vec<_>>>()?;
    let gap_us = f64::from(params.size_bytes) * 8.0 / src_node.line_rate_mbps;
    let mut draws = LossDraws::new(params.seed);
    Ok((0..params.n_packets)
        .map(|k| {
            let which = k as usize % paths.len();
            let send = (f64::from(k) * gap_us).round() as i64;
            let recv = paths[which]
                .transit(send as f64, params.size_bytes, &mut draws)
                .map(|t| send + (t - send as f64).round() as i64);
            TrainRecord {
                packet_index: k,
                send_timestamp_us: send,
                recv_timestamp_us: recv,
                size_bytes: params.size_bytes,
                destination: params.destinations[which].clone(),
            }
        })
        .collect())
}

/// Minimum of `capacity - cross traffic` over the route's links, in Mbps.
pub fn ground_truth_available_bandwidth(topo: &SimTopology, src: &str, dst: &str) -> Result<f64> {
    let route = topo.compute_route(src, dst)?;
    topo.route_links(&route)
        .iter()
        .map(|l| l.available_mbps())
        .reduce(f64::min)
        .ok_or_else(|| Error::param("source and destination are the same node"))
}
