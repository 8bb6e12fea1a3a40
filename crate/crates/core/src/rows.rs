//! Flat row shapes exchanged between agents, the management layer and the
//! result repository, and conversions to and from typed records.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{timeout_ms, unknown_address, Hop, PingResult, Row, TimestampUs, TracerouteResult};

pub fn to_rows<T: Serialize>(items: &[T]) -> Vec<Row> {
    items
        .iter()
        .map(|item| match serde_json::to_value(item) {
            Ok(serde_json::Value::Object(map)) => map,
            _ => unreachable!("row types serialize to flat objects"),
        })
        .collect()
}

pub fn from_rows<T: DeserializeOwned>(rows: &[Row]) -> Result<Vec<T>> {
    rows.iter()
        .map(|r| {
            serde_json::from_value(serde_json::Value::Object(r.clone()))
                .map_err(|e| Error::param(format!("malformed row: {e}")))
        })
        .collect()
}

/// One ping probe. Lost probes carry `"TIMEOUT"` in `rttMs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PingRow {
    pub source: String,
    pub target: String,
    pub seq: u32,
    pub size_bytes: u32,
    #[serde(with = "timeout_ms")]
    pub rtt_ms: Option<f64>,
}

pub fn ping_rows(source: &str, target: &str, size_bytes: u32, probes: &[Option<f64>]) -> Vec<PingRow> {
    probes
        .iter()
        .enumerate()
        .map(|(seq, rtt)| PingRow {
            source: source.to_owned(),
            target: target.to_owned(),
            seq: seq as u32,
            size_bytes,
            rtt_ms: *rtt,
        })
        .collect()
}

/// Rebuilds a ping summary from its probe rows (all for one target).
pub fn ping_result(rows: &[PingRow]) -> Option<PingResult> {
    let first = rows.first()?;
    let rtt_ms: Vec<f64> = rows.iter().filter_map(|r| r.rtt_ms).collect();
    Some(PingResult {
        target: first.target.clone(),
        sent: rows.len() as u32,
        received: rtt_ms.len() as u32,
        rtt_ms,
        packet_size_bytes: first.size_bytes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TracerouteRow {
    pub source: String,
    pub target: String,
    pub ttl: u32,
    #[serde(with = "unknown_address")]
    pub address: Option<String>,
    #[serde(with = "timeout_ms")]
    pub rtt_ms: Option<f64>,
}

pub fn traceroute_rows(source: &str, result: &TracerouteResult) -> Vec<TracerouteRow> {
    result
        .hops
        .iter()
        .map(|h| TracerouteRow {
            source: source.to_owned(),
            target: result.target.clone(),
            ttl: h.ttl,
            address: h.address.clone(),
            rtt_ms: h.rtt_ms,
        })
        .collect()
}

pub fn traceroute_result(target: &str, rows: &[TracerouteRow]) -> TracerouteResult {
    let mut hops: Vec<Hop> = rows
        .iter()
        .map(|r| Hop {
            ttl: r.ttl,
            address: r.address.clone(),
            rtt_ms: r.rtt_ms,
        })
        .collect();
    hops.sort_by_key(|h| h.ttl);
    TracerouteResult {
        target: target.to_owned(),
        hops,
    }
}

/// Train sender log entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainSentRow {
    pub packet_index: u32,
    pub send_timestamp_us: TimestampUs,
    pub size_bytes: u32,
    pub destination: String,
}

/// Train capture log entry at one destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainCapturedRow {
    pub packet_index: u32,
    pub recv_timestamp_us: TimestampUs,
    pub destination: String,
}

/// Processed result of an available-bandwidth run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BandwidthRow {
    pub source: String,
    pub destination: String,
    pub bandwidth_mbps: f64,
    pub excursion_start: u32,
}
