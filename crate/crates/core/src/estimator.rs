//! Chirp-based available-bandwidth estimation.
//!
//! A chirp's send gaps shrink geometrically, so its instantaneous rate sweeps
//! upward. Once that rate exceeds the path's available bandwidth the probe
//! queues behind itself and one-way delay starts to climb. The estimate is the
//! instantaneous rate at the start of the first sustained delay excursion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorCode, Result};
use crate::model::{ChirpParams, ChirpRecord, TimestampUs};

/// Rate at which the default sweep starts.
pub const SWEEP_START_MBPS: f64 = 1.0;
pub const SWEEP_PACKET_BYTES: u32 = 1500;
pub const SWEEP_PACKETS: u32 = 128;
/// Number of consecutive packets that must show positive, non-decreasing
/// queuing delay.
pub const EXCURSION_RUN: usize = 3;

/// Default chirp for a source with the given line rate: starts at 1 Mbps and
/// ends at roughly twice the line rate.
pub fn default_sweep(destination: impl Into<String>, line_rate_mbps: f64, seed: u64) -> ChirpParams {
    let bits = f64::from(SWEEP_PACKET_BYTES) * 8.0;
    let initial_gap_us = bits / SWEEP_START_MBPS;
    let final_gap_us = bits / (2.0 * line_rate_mbps);
    // the last of the n-1 gaps is initial * ratio^(n-2)
    let gap_ratio = (final_gap_us / initial_gap_us).powf(1.0 / f64::from(SWEEP_PACKETS - 2));
    ChirpParams {
        destination: destination.into(),
        n_packets: SWEEP_PACKETS,
        size_bytes: SWEEP_PACKET_BYTES,
        initial_gap_us,
        gap_ratio,
        seed,
    }
}

/// What the sender logged for one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SentPacket {
    pub packet_index: u32,
    pub send_timestamp_us: TimestampUs,
    pub size_bytes: u32,
}

/// What the capture side logged for one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CapturedPacket {
    pub packet_index: u32,
    pub recv_timestamp_us: TimestampUs,
}

/// Joins sender and capture logs by packet index. Packets the capture never
/// saw come out as LOST. Duplicate captures keep the first arrival.
pub fn align(sent: &[SentPacket], captured: &[CapturedPacket]) -> Vec<ChirpRecord> {
    let mut recv: BTreeMap<u32, TimestampUs> = BTreeMap::new();
    for c in captured {
        recv.entry(c.packet_index).or_insert(c.recv_timestamp_us);
    }
    let mut out: Vec<ChirpRecord> = sent
        .iter()
        .map(|s| ChirpRecord {
            packet_index: s.packet_index,
            send_timestamp_us: s.send_timestamp_us,
            recv_timestamp_us: recv.get(&s.packet_index).copied(),
            size_bytes: s.size_bytes,
        })
        .collect();
    out.sort_by_key(|r| r.packet_index);
    out
}

/// Queuing delay per received packet: one-way delay minus the smallest
/// one-way delay in the chirp. Clock offset between the ends cancels out.
pub fn queuing_delays(records: &[ChirpRecord]) -> Vec<(usize, i64)> {
    let owd: Vec<(usize, i64)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.recv_timestamp_us.map(|recv| (i, recv - r.send_timestamp_us)))
        .collect();
    let Some(base) = owd.iter().map(|&(_, d)| d).min() else {
        return Vec::new();
    };
    owd.into_iter().map(|(i, d)| (i, d - base)).collect()
}

/// Instantaneous rate of packet `i` in Mbps, from the send gap before it.
pub fn instantaneous_rate_mbps(records: &[ChirpRecord], i: usize) -> Option<f64> {
    if i == 0 {
        return None;
    }
    let gap = records[i].send_timestamp_us - records[i - 1].send_timestamp_us;
    (gap > 0).then(|| f64::from(records[i].size_bytes) * 8.0 / gap as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Estimate {
    pub bandwidth_mbps: f64,
    /// Packet index where the excursion starts.
    pub excursion_start: u32,
}

/// Finds the first received packet that opens a run of [`EXCURSION_RUN`]
/// packets with positive, non-decreasing queuing delay, and reports its
/// instantaneous rate. Lost packets are skipped.
pub fn estimate(records: &[ChirpRecord]) -> Result<Estimate> {
    let q = queuing_delays(records);
    for start in 0..q.len() {
        let Some(run) = q.get(start..start + EXCURSION_RUN) else {
            break;
        };
        let sustained = run.iter().all(|&(_, d)| d > 0) && run.windows(2).all(|w| w[1].1 >= w[0].1);
        if !sustained {
            continue;
        }
        let idx = run[0].0;
        if let Some(rate) = instantaneous_rate_mbps(records, idx) {
            return Ok(Estimate {
                bandwidth_mbps: rate,
                excursion_start: records[idx].packet_index,
            });
        }
    }
    Err(Error::new(
        ErrorCode::EstimationFailed,
        "no sustained queuing excursion within the sweep",
    ))
}
