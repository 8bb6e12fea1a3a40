//! Value types shared by the management layer, the agents, the result
//! repository and the command-line client.
//!
//! Every type serializes to JSON with lowerCamelCase field names. Sentinel
//! values from the measurement vocabulary (`UNKNOWN` hop addresses, `TIMEOUT`
//! hop RTTs, `LOST` receive timestamps) are encoded as those literal strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: &str = "sonoma/1";

/// Microseconds since the Unix epoch.
pub type TimestampUs = i64;

/// One flat result record: field name to scalar value, in insertion order.
pub type Row = serde_json::Map<String, serde_json::Value>;

pub fn now_us() -> TimestampUs {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as TimestampUs)
        .unwrap_or_default()
}

macro_rules! token_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            /// A fresh random token (128 bits, hex encoded).
            pub fn generate() -> Self {
                Self(uuid::Uuid::new_v4().simple().to_string())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

token_newtype!(
    /// Opaque session token handed to an authenticated client.
    SessionId
);
token_newtype!(ProcessId);
token_newtype!(TaskId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Privilege {
    Guest,
    Registered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OutputFormat {
    Csv,
    Xml,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Xml => "xml",
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CSV" => Ok(OutputFormat::Csv),
            "XML" => Ok(OutputFormat::Xml),
            other => Err(Error::new(
                crate::error::ErrorCode::UnsupportedFormat,
                format!("unsupported output format {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub id: SessionId,
    pub user: String,
    pub privilege: Privilege,
    pub zip_results: bool,
    pub format_results: OutputFormat,
    pub opened_at: TimestampUs,
    pub request_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Capability {
    Ping,
    Traceroute,
    Chirp,
    Train,
}

impl Capability {
    pub const ALL: [Capability; 4] = [
        Capability::Ping,
        Capability::Traceroute,
        Capability::Chirp,
        Capability::Train,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    Free,
    Busy,
    Offline,
}

/// Per-agent limits enforced on every task sent to that agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GrayList {
    pub max_probe_rate_pps: u64,
    pub max_packet_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeDescriptor {
    pub node_id: String,
    pub address: String,
    pub capabilities: BTreeSet<Capability>,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gray_list_constraints: Option<GrayList>,
}

/// Lifecycle shared by processes and atomic tasks.
///
/// `SCHEDULED -> RUNNING -> {FINISHED | FAILED | KILLED}`, plus
/// `SCHEDULED -> KILLED`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleState {
    Scheduled,
    Running,
    Finished,
    Failed,
    Killed,
}

impl LifecycleState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            LifecycleState::Finished | LifecycleState::Failed | LifecycleState::Killed
        )
    }

    pub fn can_transition_to(self, next: LifecycleState) -> bool {
        use LifecycleState::*;
        matches!(
            (self, next),
            (Scheduled, Running)
                | (Scheduled, Killed)
                | (Running, Finished)
                | (Running, Failed)
                | (Running, Killed)
        )
    }

    /// Applies a transition, refusing anything off the automaton.
    pub fn transition(&mut self, next: LifecycleState) -> Result<()> {
        if self.can_transition_to(next) {
            *self = next;
            Ok(())
        } else {
            Err(Error::new(
                crate::error::ErrorCode::Internal,
                format!("illegal lifecycle transition {self:?} -> {next:?}"),
            ))
        }
    }
}

/// What a process (or a stored record) measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MeasurementKind {
    Ping,
    Traceroute,
    Chirp,
    Train,
    Topology,
    Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessHandle {
    pub process_id: ProcessId,
    pub session_id: SessionId,
    pub kind: MeasurementKind,
    pub state: LifecycleState,
    pub expected_duration_sec: f64,
    pub tasks: Vec<TaskId>,
    pub created_at: TimestampUs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Ping,
    Traceroute,
    ChirpSend,
    Capture,
    TrainSend,
    TrainRecv,
}

impl TaskKind {
    pub fn resource_mode(self) -> ResourceMode {
        match self {
            TaskKind::Ping | TaskKind::Traceroute => ResourceMode::TimeSharing,
            TaskKind::ChirpSend | TaskKind::Capture | TaskKind::TrainSend | TaskKind::TrainRecv => {
                ResourceMode::TimeReserving
            }
        }
    }

    pub fn required_capability(self) -> Capability {
        match self {
            TaskKind::Ping => Capability::Ping,
            TaskKind::Traceroute => Capability::Traceroute,
            TaskKind::ChirpSend | TaskKind::Capture => Capability::Chirp,
            TaskKind::TrainSend | TaskKind::TrainRecv => Capability::Train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResourceMode {
    TimeSharing,
    TimeReserving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PingParams {
    pub target: String,
    pub count: u32,
    pub size_bytes: u32,
    #[serde(default = "default_interval")]
    pub interval_sec: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TracerouteParams {
    pub target: String,
    pub size_bytes: u32,
    #[serde(default)]
    pub seed: u64,
}

/// Parameters of one chirp, shared by the sender and the capturing side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChirpParams {
    pub destination: String,
    pub n_packets: u32,
    pub size_bytes: u32,
    pub initial_gap_us: f64,
    pub gap_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CaptureParams {
    pub source: String,
    pub chirp: ChirpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainParams {
    pub destinations: Vec<String>,
    pub n_packets: u32,
    pub size_bytes: u32,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainRecvParams {
    pub source: String,
    pub train: TrainParams,
}

/// Kind discriminator plus the matching parameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskSpec {
    Ping(PingParams),
    Traceroute(TracerouteParams),
    ChirpSend(ChirpParams),
    Capture(CaptureParams),
    TrainSend(TrainParams),
    TrainRecv(TrainRecvParams),
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Ping(_) => TaskKind::Ping,
            TaskSpec::Traceroute(_) => TaskKind::Traceroute,
            TaskSpec::ChirpSend(_) => TaskKind::ChirpSend,
            TaskSpec::Capture(_) => TaskKind::Capture,
            TaskSpec::TrainSend(_) => TaskKind::TrainSend,
            TaskSpec::TrainRecv(_) => TaskKind::TrainRecv,
        }
    }

    /// Largest packet this task puts on the wire.
    pub fn packet_bytes(&self) -> u32 {
        match self {
            TaskSpec::Ping(p) => p.size_bytes,
            TaskSpec::Traceroute(p) => p.size_bytes,
            TaskSpec::ChirpSend(p) => p.size_bytes,
            TaskSpec::Capture(p) => p.chirp.size_bytes,
            TaskSpec::TrainSend(p) => p.size_bytes,
            TaskSpec::TrainRecv(p) => p.train.size_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AtomicTask {
    pub task_id: TaskId,
    pub agent: String,
    #[serde(flatten)]
    pub spec: TaskSpec,
    pub resource_mode: ResourceMode,
    pub state: LifecycleState,
}

impl AtomicTask {
    /// A fresh SCHEDULED task whose resource mode follows from its kind.
    pub fn new(agent: impl Into<String>, spec: TaskSpec) -> Self {
        Self {
            task_id: TaskId::generate(),
            agent: agent.into(),
            resource_mode: spec.kind().resource_mode(),
            spec,
            state: LifecycleState::Scheduled,
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind()
    }

    /// Checks the kind/resource-mode pairing.
    pub fn validate_mode(&self) -> Result<()> {
        if self.resource_mode != self.kind().resource_mode() {
            return Err(Error::param(format!(
                "{:?} tasks must run in {:?} mode",
                self.kind(),
                self.kind().resource_mode()
            )));
        }
        Ok(())
    }
}

macro_rules! sentinel_option {
    ($modname:ident, $ty:ty, $literal:expr) => {
        pub mod $modname {
            use serde::{Deserialize, Deserializer, Serialize, Serializer};

            pub const LITERAL: &str = $literal;

            pub fn serialize<S: Serializer>(v: &Option<$ty>, s: S) -> Result<S::Ok, S::Error> {
                match v {
                    Some(x) => x.serialize(s),
                    None => s.serialize_str(LITERAL),
                }
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<$ty>, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Either {
                    Value($ty),
                    Tag(String),
                }
                match Either::deserialize(d)? {
                    Either::Value(v) => Ok(Some(v)),
                    Either::Tag(t) if t == LITERAL => Ok(None),
                    Either::Tag(t) => Err(serde::de::Error::custom(format!(
                        "expected a value or {:?}, got {:?}",
                        LITERAL, t
                    ))),
                }
            }
        }
    };
}

sentinel_option!(timeout_ms, f64, "TIMEOUT");
sentinel_option!(lost_us, i64, "LOST");

/// `None` encodes as `"UNKNOWN"`.
pub mod unknown_address {
    use serde::{Deserialize, Deserializer, Serializer};

    pub const LITERAL: &str = "UNKNOWN";

    pub fn serialize<S: Serializer>(v: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.as_deref().unwrap_or(LITERAL))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok((s != LITERAL).then_some(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PingResult {
    pub target: String,
    pub sent: u32,
    pub received: u32,
    pub rtt_ms: Vec<f64>,
    pub packet_size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Hop {
    pub ttl: u32,
    #[serde(with = "unknown_address")]
    pub address: Option<String>,
    #[serde(with = "timeout_ms")]
    pub rtt_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TracerouteResult {
    pub target: String,
    pub hops: Vec<Hop>,
}

impl TracerouteResult {
    /// TTLs start at 1 and increase by one per hop.
    pub fn is_well_formed(&self) -> bool {
        self.hops
            .iter()
            .enumerate()
            .all(|(i, h)| h.ttl as usize == i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChirpRecord {
    pub packet_index: u32,
    pub send_timestamp_us: TimestampUs,
    #[serde(with = "lost_us")]
    pub recv_timestamp_us: Option<TimestampUs>,
    pub size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainRecord {
    pub packet_index: u32,
    pub send_timestamp_us: TimestampUs,
    #[serde(with = "lost_us")]
    pub recv_timestamp_us: Option<TimestampUs>,
    pub size_bytes: u32,
    pub destination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Edge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EdgeDelay {
    pub from: String,
    pub to: String,
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TopologyGraphWire {
    nodes: Vec<String>,
    edges: Vec<Edge>,
    per_edge_delay_ms: Vec<EdgeDelay>,
}

/// Directed router-level graph assembled from traceroute paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "TopologyGraphWire", try_from = "TopologyGraphWire")]
pub struct TopologyGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    pub per_edge_delay_ms: BTreeMap<(String, String), f64>,
}

impl TopologyGraph {
    pub fn is_consistent(&self) -> bool {
        self.edges
            .iter()
            .all(|(a, b)| self.nodes.contains(a) && self.nodes.contains(b))
            && self.per_edge_delay_ms.keys().all(|e| self.edges.contains(e))
    }
}

impl From<TopologyGraph> for TopologyGraphWire {
    fn from(g: TopologyGraph) -> Self {
        Self {
            nodes: g.nodes.into_iter().collect(),
            edges: g
                .edges
                .into_iter()
                .map(|(from, to)| Edge { from, to })
                .collect(),
            per_edge_delay_ms: g
                .per_edge_delay_ms
                .into_iter()
                .map(|((from, to), delay_ms)| EdgeDelay { from, to, delay_ms })
                .collect(),
        }
    }
}

impl TryFrom<TopologyGraphWire> for TopologyGraph {
    type Error = String;

    fn try_from(w: TopologyGraphWire) -> std::result::Result<Self, String> {
        let g = TopologyGraph {
            nodes: w.nodes.into_iter().collect(),
            edges: w.edges.into_iter().map(|e| (e.from, e.to)).collect(),
            per_edge_delay_ms: w
                .per_edge_delay_ms
                .into_iter()
                .map(|e| ((e.from, e.to), e.delay_ms))
                .collect(),
        };
        if g.is_consistent() {
            Ok(g)
        } else {
            Err("topology graph references unknown nodes or edges".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    Raw,
    Processed,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Raw => "raw",
            Layer::Processed => "processed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeasurementRecord {
    pub session_id: SessionId,
    pub process_id: ProcessId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
    pub kind: MeasurementKind,
    pub raw_rows: Vec<Row>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processed_rows: Option<Vec<Row>>,
    pub stored_at: TimestampUs,
}
