//! Request and response bodies of the HTTP interfaces.
//!
//! * Instructor interface, served by agents at `POST /instructor/<op>`.
//! * Callback interface, served by the management layer at `POST /callback`.
//! * Client interface, served by the management layer at `POST /api/<op>`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{
    Capability, ChirpRecord, LifecycleState, MeasurementKind, NodeDescriptor, NodeStatus, ProcessId,
    ResourceMode, Row, SessionId, TaskId, TaskKind, TrainRecord,
};

// ---- instructor interface -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CapabilitiesResponse {
    pub node_id: String,
    pub address: String,
    pub capabilities: BTreeSet<Capability>,
    pub status: NodeStatus,
    pub protocol_version: String,
    pub line_rate_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StartTaskResponse {
    pub task_id: TaskId,
    pub accepted: bool,
    pub expected_duration_sec: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<crate::error::ErrorCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskRef {
    pub task_id: TaskId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Ack {
    pub acknowledged: bool,
}

impl Ack {
    pub const YES: Ack = Ack { acknowledged: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskData {
    pub task_id: TaskId,
    pub state: LifecycleState,
    pub raw_rows: Vec<Row>,
}

/// One entry of an agent's execution log. Times are microseconds on the
/// agent's monotonic clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionEntry {
    pub task_id: TaskId,
    pub kind: TaskKind,
    pub resource_mode: ResourceMode,
    pub started_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_state: Option<LifecycleState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionLog {
    pub entries: Vec<ExecutionEntry>,
}

// ---- client interface -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VersionResponse {
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestSession {
    pub user: String,
    #[serde(default)]
    pub credential: String,
    #[serde(default)]
    pub zip_results: bool,
    #[serde(default = "default_format")]
    pub format_results: String,
}

fn default_format() -> String {
    "CSV".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionResponse {
    pub session_id: SessionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionOnly {
    pub session_id: SessionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GetNodeList {
    pub session_id: SessionId,
    /// A capability name or `ALL`.
    #[serde(default)]
    pub filter: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeListResponse {
    pub nodes: Vec<NodeDescriptor>,
}

pub const DEFAULT_PING_COUNT: u32 = 4;
pub const DEFAULT_PING_BYTES: u32 = 64;
pub const DEFAULT_TRACEROUTE_BYTES: u32 = 60;

fn default_ping_count() -> u32 {
    DEFAULT_PING_COUNT
}
fn default_ping_bytes() -> u32 {
    DEFAULT_PING_BYTES
}
fn default_interval() -> f64 {
    1.0
}
fn default_traceroute_bytes() -> u32 {
    DEFAULT_TRACEROUTE_BYTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PingOptions {
    #[serde(default = "default_ping_count")]
    pub count: u32,
    #[serde(default = "default_ping_bytes")]
    pub size_bytes: u32,
    #[serde(default = "default_interval")]
    pub interval_sec: f64,
}

impl Default for PingOptions {
    fn default() -> Self {
        Self {
            count: DEFAULT_PING_COUNT,
            size_bytes: DEFAULT_PING_BYTES,
            interval_sec: 1.0,
        }
    }
}

/// shortPing / longPing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PingRequest {
    pub session_id: SessionId,
    pub source_node: String,
    pub target: String,
    #[serde(flatten)]
    pub options: PingOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParallelPingRequest {
    pub session_id: SessionId,
    pub source_node: String,
    pub targets: Vec<String>,
    #[serde(flatten)]
    pub options: PingOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnsemblePingRequest {
    pub session_id: SessionId,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    #[serde(flatten)]
    pub options: PingOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TracerouteRequest {
    pub session_id: SessionId,
    pub source_node: String,
    pub target: String,
    #[serde(default = "default_traceroute_bytes")]
    pub size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParallelTracerouteRequest {
    pub session_id: SessionId,
    pub source_node: String,
    pub targets: Vec<String>,
    #[serde(default = "default_traceroute_bytes")]
    pub size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnsembleTracerouteRequest {
    pub session_id: SessionId,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    #[serde(default = "default_traceroute_bytes")]
    pub size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShortPingResponse {
    pub process_id: ProcessId,
    pub result: crate::model::PingResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShortTracerouteResponse {
    pub process_id: ProcessId,
    pub result: crate::model::TracerouteResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChirpRequest {
    pub session_id: SessionId,
    pub src_node: String,
    pub dst_node: String,
    pub n_packets: u32,
    pub size_bytes: u32,
    pub initial_gap_us: f64,
    pub gap_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChirpResponse {
    pub process_id: ProcessId,
    pub records: Vec<ChirpRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainRequest {
    pub session_id: SessionId,
    pub src_node: String,
    pub dst_nodes: Vec<String>,
    pub n_packets: u32,
    pub size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainResponse {
    pub process_id: ProcessId,
    pub records: Vec<TrainRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BandwidthRequest {
    pub session_id: SessionId,
    pub src_node: String,
    pub dst_node: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BandwidthResponse {
    pub bandwidth_mbps: f64,
    pub process_id_of_raw_data: ProcessId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopologyRequest {
    pub session_id: SessionId,
    pub node_list: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessStarted {
    pub process_id: ProcessId,
    pub expected_duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessRequest {
    pub session_id: SessionId,
    pub process_id: ProcessId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessInfo {
    pub process_id: ProcessId,
    pub kind: MeasurementKind,
    pub state: LifecycleState,
    pub completed_tasks: usize,
    pub total_tasks: usize,
    pub expected_duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GetResultsRequest {
    pub session_id: SessionId,
    pub process_id: ProcessId,
    #[serde(default)]
    pub raw: bool,
    /// Overrides the session's output format for this call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Overrides the session's compression preference for this call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zip: Option<bool>,
}

/// Formatted result payload. `payload` is base64 of the (possibly gzipped)
/// CSV or XML bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultsResponse {
    pub process_id: ProcessId,
    pub state: LifecycleState,
    /// Set when the process did not finish normally.
    pub partial: bool,
    pub format: crate::model::OutputFormat,
    pub zipped: bool,
    pub row_count: usize,
    pub payload: String,
}

impl ResultsResponse {
    pub fn payload_bytes(&self) -> crate::error::Result<Vec<u8>> {
        use base64::Engine;
        base64::engine::general_purpose::STANDARD
            .decode(&self.payload)
            .map_err(|e| crate::error::Error::param(format!("bad payload encoding: {e}")))
    }

    /// Payload with any gzip layer removed.
    pub fn plain_bytes(&self) -> crate::error::Result<Vec<u8>> {
        let bytes = self.payload_bytes()?;
        if self.zipped {
            crate::vo::format::gunzip(&bytes)
        } else {
            Ok(bytes)
        }
    }
}

pub fn encode_payload(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

// ---- admin ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionAccounting {
    pub session_id: SessionId,
    pub user: String,
    pub open: bool,
    pub request_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentAccounting {
    pub node_id: String,
    pub tasks_dispatched: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Accounting {
    pub sessions: Vec<SessionAccounting>,
    pub agents: Vec<AgentAccounting>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoRetrieveRequest {
    pub session_id: SessionId,
    pub process_id: ProcessId,
    pub layer: crate::model::Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoRetrieveResponse {
    pub groups: Vec<crate::vo::RowGroup>,
}

/// Writes every stored group below `dir` on the management host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoExportRequest {
    pub dir: String,
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default)]
    pub zip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoExportResponse {
    pub files: Vec<String>,
}

/// Inbound agent registration on the admin interface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentRegistration {
    pub node_id: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gray_list: Option<crate::model::GrayList>,
}

/// One entry of `GET /api/describe`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OperationDescription {
    pub name: String,
    pub mode: String,
    pub requires_session: bool,
    pub params: Vec<String>,
    pub returns: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Catalog {
    pub version: String,
    pub protocol_version: String,
    pub operations: Vec<OperationDescription>,
}
