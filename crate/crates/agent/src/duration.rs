//! Conservative run-time estimates reported to the management layer.

use sonoma_core::model::TaskSpec;
use sonoma_core::simnet::chirp_send_offsets;

pub const TRACEROUTE_BOUND_SEC: f64 = 30.0;
const SLACK_SEC: f64 = 2.0;

/// Expected duration of a task in seconds. `sender_line_rate_mbps` is the
/// line rate of the node emitting a train.
pub fn expected_duration_sec(spec: &TaskSpec, sender_line_rate_mbps: f64) -> f64 {
    match spec {
        TaskSpec::Ping(p) => f64::from(p.count) * p.interval_sec.max(1.0) + SLACK_SEC,
        TaskSpec::Traceroute(_) => TRACEROUTE_BOUND_SEC,
        TaskSpec::ChirpSend(c) | TaskSpec::Capture(sonoma_core::model::CaptureParams { chirp: c, .. }) => {
            let span_us = chirp_send_offsets(c.n_packets, c.initial_gap_us, c.gap_ratio)
                .last()
                .copied()
                .unwrap_or_default();
            span_us as f64 / 1e6 + SLACK_SEC
        }
        TaskSpec::TrainSend(t) | TaskSpec::TrainRecv(sonoma_core::model::TrainRecvParams { train: t, .. }) => {
            let gap_us = f64::from(t.size_bytes) * 8.0 / sender_line_rate_mbps;
            f64::from(t.n_packets) * gap_us / 1e6 + SLACK_SEC
        }
    }
}
