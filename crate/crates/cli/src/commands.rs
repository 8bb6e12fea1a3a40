//! The `sonoma` subcommands. Each opens its own session and closes it
//! before returning, whatever the outcome.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::Value;
use sonoma_core::api::*;
use sonoma_core::model::{LifecycleState, ProcessId, SessionId};
use sonoma_core::rows::TracerouteRow;
use sonoma_core::topology::{graph_from_edge_rows, EdgeRow, TopologySummary};
use sonoma_core::{Error, ErrorCode, Result};

use crate::client::{Client, ClientConfig};

fn io(e: std::io::Error) -> Error {
    Error::from(e)
}

fn with_session<T>(c: &Client, cfg: &ClientConfig, f: impl FnOnce(&SessionId) -> Result<T>) -> Result<T> {
    let s = c.open_session(cfg)?;
    let r = f(&s);
    // a failed close must not mask the command's own outcome
    let closed = c.close_session(&s);
    let v = r?;
    closed?;
    Ok(v)
}

/// Polls every min(2 s, expected / 10) until the process is terminal and
/// gives up at twice the expected duration.
pub fn wait_for(c: &Client, s: &SessionId, p: &ProcessStarted) -> Result<ProcessInfo> {
    let tick = Duration::from_secs_f64((p.expected_duration_sec / 10.0).clamp(0.01, 2.0));
    let deadline = Instant::now() + Duration::from_secs_f64(2.0 * p.expected_duration_sec);
    let req = ProcessRequest { session_id: s.clone(), process_id: p.process_id.clone() };
    loop {
        let info: ProcessInfo = c.call("getProcessInfo", &req)?;
        if info.state.is_terminal() {
            return Ok(info);
        }
        if Instant::now() >= deadline {
            let _ = c.call_value("killProcess", &serde_json::to_value(&req).expect("plain struct"));
            return Err(Error::new(ErrorCode::Timeout, "measurement did not finish in time"));
        }
        std::thread::sleep(tick);
    }
}

fn results(c: &Client, s: &SessionId, p: &ProcessId, raw: bool) -> Result<(ResultsResponse, Vec<u8>)> {
    let r: ResultsResponse = c.call(
        "getResults",
        &GetResultsRequest { session_id: s.clone(), process_id: p.clone(), raw, format: None, zip: None },
    )?;
    let bytes = r.plain_bytes()?;
    Ok((r, bytes))
}

fn parse_csv<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::new(ErrorCode::Internal, format!("bad CSV: {e}")))
}

/// Hop count of each collected route: the TTL at which the target
/// answered, or the number of probed hops when it never did.
pub fn route_lengths(rows: &[TracerouteRow]) -> Vec<usize> {
    let mut routes: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut reached: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in rows {
        let key = (r.source.as_str(), r.target.as_str());
        *routes.entry(key).or_default() += 1;
        if r.address.as_deref() == Some(r.target.as_str()) {
            reached.entry(key).or_insert(r.ttl as usize);
        }
    }
    routes.iter().map(|(k, n)| reached.get(k).copied().unwrap_or(*n)).collect()
}

/// Summary recomputed from the two files `topology` writes.
pub fn summarize(edge_csv: &[u8], routes_csv: &[u8]) -> Result<TopologySummary> {
    let edges: Vec<EdgeRow> = parse_csv(edge_csv)?;
    let routes: Vec<TracerouteRow> = parse_csv(routes_csv)?;
    Ok(TopologySummary::new(&route_lengths(&routes), &graph_from_edge_rows(&edges)))
}

pub fn routes_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".routes.csv");
    name.into()
}

/// Writes the edge list to `out` and the raw routes next to it, then
/// prints the summary. Always CSV.
pub fn topology(c: &Client, cfg: &ClientConfig, nodes: &[String], out: &Path, w: &mut dyn Write) -> Result<()> {
    let cfg = ClientConfig { format: "CSV".into(), ..cfg.clone() };
    with_session(c, &cfg, |s| {
        let started: ProcessStarted = c.call(
            "topology",
            &TopologyRequest { session_id: s.clone(), node_list: nodes.to_vec() },
        )?;
        let info = wait_for(c, s, &started)?;
        if info.state != LifecycleState::Finished {
            return Err(Error::new(ErrorCode::AgentError, format!("topology ended {:?}", info.state)));
        }
        let (_, edges) = results(c, s, &started.process_id, false)?;
        let (_, routes) = results(c, s, &started.process_id, true)?;
        std::fs::write(out, &edges).map_err(io)?;
        std::fs::write(routes_path(out), &routes).map_err(io)?;
        let summary = summarize(&edges, &routes)?;
        write!(w, "{}", summary.render()).map_err(io)
    })
}

pub fn bandwidth(c: &Client, cfg: &ClientConfig, src: &str, dst: &str, w: &mut dyn Write) -> Result<()> {
    with_session(c, cfg, |s| {
        let r: BandwidthResponse = c.call(
            "getAvailableBandwidth",
            &BandwidthRequest { session_id: s.clone(), src_node: src.into(), dst_node: dst.into() },
        )?;
        writeln!(w, "available bandwidth: {:.3} Mbps", r.bandwidth_mbps).map_err(io)?;
        writeln!(w, "raw data: {}", r.process_id_of_raw_data.as_str()).map_err(io)
    })
}

pub fn ping(c: &Client, cfg: &ClientConfig, src: &str, target: &str, options: PingOptions, w: &mut dyn Write) -> Result<()> {
    with_session(c, cfg, |s| {
        let r: ShortPingResponse = c.call(
            "shortPing",
            &PingRequest { session_id: s.clone(), source_node: src.into(), target: target.into(), options },
        )?;
        let p = &r.result;
        writeln!(w, "{} -> {}: {} sent, {} received", src, p.target, p.sent, p.received).map_err(io)?;
        if !p.rtt_ms.is_empty() {
            let min = p.rtt_ms.iter().copied().fold(f64::INFINITY, f64::min);
            let max = p.rtt_ms.iter().copied().fold(0.0, f64::max);
            let avg = p.rtt_ms.iter().sum::<f64>() / p.rtt_ms.len() as f64;
            writeln!(w, "rtt min/avg/max = {min:.3}/{avg:.3}/{max:.3} ms").map_err(io)?;
        }
        Ok(())
    })
}

pub fn traceroute(c: &Client, cfg: &ClientConfig, src: &str, target: &str, w: &mut dyn Write) -> Result<()> {
    with_session(c, cfg, |s| {
        let r: ShortTracerouteResponse = c.call(
            "shortTraceroute",
            &TracerouteRequest {
                session_id: s.clone(),
                source_node: src.into(),
                target: target.into(),
                size_bytes: DEFAULT_TRACEROUTE_BYTES,
            },
        )?;
        for h in &r.result.hops {
            let addr = h.address.as_deref().unwrap_or("*");
            match h.rtt_ms {
                Some(rtt) => writeln!(w, "{:>2}  {addr}  {rtt:.3} ms", h.ttl),
                None => writeln!(w, "{:>2}  {addr}  *", h.ttl),
            }
            .map_err(io)?;
        }
        Ok(())
    })
}

pub struct ChirpArgs {
    pub n_packets: u32,
    pub size_bytes: u32,
    pub initial_gap_us: f64,
    pub gap_ratio: f64,
}

fn write_csv<T: serde::Serialize>(rows: &[T], w: &mut dyn Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::new(ErrorCode::Internal, e.to_string()))?;
    }
    out.flush().map_err(io)
}

pub fn chirp(c: &Client, cfg: &ClientConfig, src: &str, dst: &str, a: ChirpArgs, w: &mut dyn Write) -> Result<()> {
    with_session(c, cfg, |s| {
        let r: ChirpResponse = c.call(
            "shortChirp",
            &ChirpRequest {
                session_id: s.clone(),
                src_node: src.into(),
                dst_node: dst.into(),
                n_packets: a.n_packets,
                size_bytes: a.size_bytes,
                initial_gap_us: a.initial_gap_us,
                gap_ratio: a.gap_ratio,
            },
        )?;
        write_csv(&r.records, w)
    })
}

pub fn train(c: &Client, cfg: &ClientConfig, src: &str, dsts: &[String], n_packets: u32, size_bytes: u32, w: &mut dyn Write) -> Result<()> {
    with_session(c, cfg, |s| {
        let r: TrainResponse = c.call(
            "shortTrain",
            &TrainRequest {
                session_id: s.clone(),
                src_node: src.into(),
                dst_nodes: dsts.to_vec(),
                n_packets,
                size_bytes,
            },
        )?;
        write_csv(&r.records, w)
    })
}

pub fn nodes(c: &Client, cfg: &ClientConfig, filter: &str, w: &mut dyn Write) -> Result<()> {
    with_session(c, cfg, |s| {
        let r: NodeListResponse = c.call(
            "getNodeList",
            &GetNodeList { session_id: s.clone(), filter: Some(filter.into()) },
        )?;
        for n in &r.nodes {
            let caps: Vec<String> = n.capabilities.iter().map(|c| format!("{c:?}").to_uppercase()).collect();
            writeln!(w, "{}\t{}\t{:?}\t{}", n.node_id, n.address, n.status, caps.join(",")).map_err(io)?;
        }
        Ok(())
    })
}

/// Posts `params` to any operation. Operations that need a session get
/// one unless the body already names it.
pub fn raw(c: &Client, cfg: &ClientConfig, op: &str, params: &str, w: &mut dyn Write) -> Result<()> {
    let mut body: Value = if params.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_str(params).map_err(|e| Error::param(format!("malformed JSON parameters: {e}")))?
    };
    if !body.is_object() {
        return Err(Error::param("parameters must be a JSON object"));
    }
    let catalog: Catalog = c.call("describe", &Value::Object(Default::default()))?;
    let needs_session = catalog
        .operations
        .iter()
        .find(|o| o.name == op)
        .is_some_and(|o| o.requires_session);
    let reply = if needs_session && body.get("sessionId").is_none() {
        with_session(c, cfg, |s| {
            body["sessionId"] = Value::String(s.as_str().into());
            c.call_value(op, &body)
        })?
    } else {
        c.call_value(op, &body)?
    };
    let text = serde_json::to_string_pretty(&reply).expect("JSON value");
    writeln!(w, "{text}").map_err(io)
}
