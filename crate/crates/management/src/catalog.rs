//! The machine-readable operation catalog served at `/api/describe`.

use sonoma_core::api::{Catalog, OperationDescription};
use sonoma_core::model::PROTOCOL_VERSION;


/// (name, mode, requires session, params, returns, summary)
type Entry = (&'static str, &'static str, bool, &'static [&'static str], &'static str, &'static str);

const OPERATIONS: &[Entry] = &[
    ("getVersion", "SYNC", false, &[], "VersionResponse", "version of the management layer"),
    ("requestSession", "SYNC", false, &["user", "credential", "zipResults", "formatResults"], "SessionResponse", "opens a session"),
    ("closeSession", "SYNC", true, &[], "Ack", "closes a session and kills its processes"),
    ("getNodeList", "SYNC", true, &["filter"], "NodeListResponse", "live measurement nodes, optionally by capability"),
    ("shortPing", "SYNC", true, &["sourceNode", "target", "count", "sizeBytes", "intervalSec"], "ShortPingResponse", "ping and wait"),
    ("longPing", "ASYNC", true, &["sourceNode", "target", "count", "sizeBytes", "intervalSec"], "ProcessStarted", "ping in the background"),
    ("parallelPing", "ASYNC", true, &["sourceNode", "targets", "count", "sizeBytes", "intervalSec"], "ProcessStarted", "ping several targets from one node"),
    ("ensemblePing", "ASYNC", true, &["sources", "targets", "count", "sizeBytes", "intervalSec"], "ProcessStarted", "ping every target from every source"),
    ("shortTraceroute", "SYNC", true, &["sourceNode", "target", "sizeBytes"], "ShortTracerouteResponse", "traceroute and wait"),
    ("longTraceroute", "ASYNC", true, &["sourceNode", "target", "sizeBytes"], "ProcessStarted", "traceroute in the background"),
    ("parallelTraceroute", "ASYNC", true, &["sourceNode", "targets", "sizeBytes"], "ProcessStarted", "traceroute several targets from one node"),
    ("ensembleTraceroute", "ASYNC", true, &["sources", "targets", "sizeBytes"], "ProcessStarted", "traceroute every target from every source"),
    ("topology", "ASYNC", true, &["nodeList"], "ProcessStarted", "full-mesh traceroute merged into an edge list"),
    ("shortChirp", "SYNC", true, &["srcNode", "dstNode", "nPackets", "sizeBytes", "initialGapUs", "gapRatio"], "ChirpResponse", "chirp between two nodes and wait"),
    ("longChirp", "ASYNC", true, &["srcNode", "dstNode", "nPackets", "sizeBytes", "initialGapUs", "gapRatio"], "ProcessStarted", "chirp in the background"),
    ("shortTrain", "SYNC", true, &["srcNode", "dstNodes", "nPackets", "sizeBytes"], "TrainResponse", "back-to-back train and wait"),
    ("longTrain", "ASYNC", true, &["srcNode", "dstNodes", "nPackets", "sizeBytes"], "ProcessStarted", "back-to-back train in the background"),
    ("getAvailableBandwidth", "SYNC", true, &["srcNode", "dstNode"], "BandwidthResponse", "chirp sweep and available bandwidth estimate"),
    ("getProcessInfo", "SYNC", true, &["processId"], "ProcessInfo", "state of a process"),
    ("getResults", "SYNC", true, &["processId", "raw", "format", "zip"], "ResultsResponse", "formatted rows of a terminated process"),
    ("getData", "SYNC", true, &["processId", "raw", "format", "zip"], "ResultsResponse", "alias of getResults"),
    ("killProcess", "SYNC", true, &["processId"], "Ack", "aborts a process and frees its agents"),
];

pub fn catalog(version: &str) -> Catalog {
    Catalog {
        version: version.to_owned(),
        protocol_version: PROTOCOL_VERSION.to_owned(),
        operations: OPERATIONS
            .iter()
            .map(|&(name, mode, requires_session, params, returns, summary)| OperationDescription {
                name: name.into(),
                mode: mode.into(),
                requires_session,
                params: params.iter().map(|p| p.to_string()).collect(),
                returns: returns.into(),
                summary: summary.into(),
            })
            .collect(),
    }
}

/// Names of operations only privileged sessions may call.
pub fn async_operations() -> impl Iterator<Item = &'static str> {
    OPERATIONS.iter().filter(|e| e.1 == "ASYNC").map(|e| e.0)
}
