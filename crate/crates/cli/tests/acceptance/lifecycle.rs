//! Reservation exclusivity under contention, and asynchronous processes
//! surviving duplicated, reordered and late agent callbacks.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier, Mutex, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::routing::post;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sonoma_core::api::{CapabilitiesResponse, ExecutionLog, ProcessInfo, ProcessStarted, ResultsResponse};
use sonoma_core::model::{Layer, LifecycleState, NodeStatus, ResourceMode};
use sonoma_core::vo::{VoEntry, LOG_FILE};
use sonoma_core::ErrorCode;

use crate::cluster::{Cluster, Options, USER};
use crate::{code_of, ensure, topologies, Outcome};

const CONTENDERS: usize = 50;

/// Concurrent shortChirps on one pair: each either runs or is refused with
/// BUSY, and no two reserving tasks ever overlap on an agent.
pub fn criterion_5() -> Outcome {
    let c = Cluster::start(topologies::line(), Options { time_scale: 1.0, ..Options::default() });
    let s = c.session(USER);
    let barrier = Arc::new(Barrier::new(CONTENDERS));
    let t = Instant::now();
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..CONTENDERS)
            .map(|_| {
                let (barrier, api, s) = (barrier.clone(), c.client(), s.clone());
                scope.spawn(move || {
                    barrier.wait();
                    api.call_value(
                        "shortChirp",
                        &json!({"sessionId": s, "srcNode": "A", "dstNode": "B", "nPackets": 16,
                                "sizeBytes": 1000, "initialGapUs": 2000.0, "gapRatio": 0.9}),
                    )
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let elapsed = t.elapsed();
    let ok = results.iter().filter(|r| r.is_ok()).count();
    let busy = results.iter().filter(|r| code_of(r) == Some(ErrorCode::Busy)).count();
    ensure(ok + busy == CONTENDERS, || {
        let other: Vec<_> = results.iter().filter(|r| r.is_err() && code_of(r) != Some(ErrorCode::Busy)).collect();
        format!("unexpected outcomes: {other:?}")
    })?;
    ensure(ok >= 1 && busy >= 1, || format!("{ok} ran and {busy} were BUSY"))?;
    let mut reserving = 0;
    let mut aborted = 0;
    for node in ["A", "B"] {
        let log: ExecutionLog = serde_json::from_value(c.agent_post(node, "getExecutionLog", json!({}))).map_err(|e| e.to_string())?;
        let mut spans: Vec<(u64, u64)> = Vec::new();
        for e in log.entries.iter().filter(|e| e.resource_mode == ResourceMode::TimeReserving) {
            let end = e.ended_us.ok_or_else(|| format!("{node}: reserving task {} never ended", e.task_id.as_str()))?;
            spans.push((e.started_us, end));
        }
        spans.sort();
        let finished = log.entries.iter().filter(|e| {
            e.resource_mode == ResourceMode::TimeReserving && e.final_state == Some(LifecycleState::Finished)
        });
        let finished = finished.count();
        reserving += finished;
        aborted += spans.len() - finished;
        for w in spans.windows(2) {
            ensure(w[0].1 <= w[1].0, || format!("{node}: reserving tasks overlap: {:?} and {:?}", w[0], w[1]))?;
        }
        let caps: CapabilitiesResponse = serde_json::from_value(c.agent_post(node, "getCapabilities", json!({}))).map_err(|e| e.to_string())?;
        ensure(caps.status == NodeStatus::Free, || format!("{node} left {:?}", caps.status))?;
    }
    // A refused chirp's capture may end on its own before the abort lands.
    ensure(reserving >= 2 * ok, || format!("{reserving} reserving tasks finished for {ok} chirps"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{ok} ran, {busy} BUSY; {reserving} finished and {aborted} released reserving tasks, none overlapping, in {:.1} s",
        elapsed.as_secs_f64()
    ))
}

/// Forwards each agent callback to the ML between one and three times,
/// each copy after a random delay of up to two seconds.
struct Proxy {
    target: OnceLock<String>,
    rng: Mutex<ChaCha8Rng>,
    http: reqwest::Client,
    received: AtomicUsize,
    forwarded: AtomicUsize,
}

async fn relay(State(p): State<Arc<Proxy>>, body: Bytes) -> &'static str {
    p.received.fetch_add(1, Ordering::SeqCst);
    let copies: Vec<u64> = {
        let mut rng = p.rng.lock().unwrap();
        (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..=2000)).collect()
    };
    for delay in copies {
        let (p, body) = (p.clone(), body.clone());
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(delay)).await;
            let url = format!("{}/callback", p.target.get().unwrap());
            let _ = p.http.post(url).header("content-type", "application/json").body(body).send().await;
            p.forwarded.fetch_add(1, Ordering::SeqCst);
        });
    }
    "{\"ok\":true}"
}

fn start_proxy(seed: u64) -> (tokio::runtime::Runtime, Arc<Proxy>, String) {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let proxy = Arc::new(Proxy {
        target: OnceLock::new(),
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        http: reqwest::Client::new(),
        received: AtomicUsize::new(0),
        forwarded: AtomicUsize::new(0),
    });
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let app = axum::Router::new().route("/callback", post(relay)).with_state(proxy.clone());
    rt.spawn(async move { axum::serve(listener, app).await });
    (rt, proxy, url)
}

fn info(c: &Cluster, s: &Value, pid: &Value) -> Result<ProcessInfo, String> {
    let v = c.client().call_value("getProcessInfo", &json!({"sessionId": s, "processId": pid})).map_err(|e| e.to_string())?;
    serde_json::from_value(v).map_err(|e| e.to_string())
}

/// RAW lines per (process, task) in the repository log.
fn raw_lines(c: &Cluster) -> Result<BTreeMap<(String, String), usize>, String> {
    let text = std::fs::read_to_string(c.vo_dir().join(LOG_FILE)).map_err(|e| e.to_string())?;
    let mut counts = BTreeMap::new();
    for line in text.lines() {
        let e: VoEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if e.key.layer == Layer::Raw {
            let task = e.key.task_id.map(|t| t.as_str().to_owned()).unwrap_or_default();
            *counts.entry((e.key.process_id.as_str().to_owned(), task)).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Polls each process until it is terminal; all must finish every task.
fn finish(c: &Cluster, s: &Value, pids: &[Value], deadline: Instant) -> Result<Vec<ProcessInfo>, String> {
    let mut infos = Vec::new();
    for pid in pids {
        let i = loop {
            let i = info(c, s, pid)?;
            if i.state.is_terminal() {
                break i;
            }
            ensure(Instant::now() < deadline, || format!("{pid} still {:?} at the deadline", i.state))?;
            std::thread::sleep(Duration::from_millis(100));
        };
        ensure(i.state == LifecycleState::Finished && i.completed_tasks == i.total_tasks, || {
            format!("{pid} ended {:?} with {}/{} tasks", i.state, i.completed_tasks, i.total_tasks)
        })?;
        infos.push(i);
    }
    Ok(infos)
}

pub fn criterion_6() -> Outcome {
    let (_rt, proxy, proxy_url) = start_proxy(6);
    let hook = proxy.clone();
    let c = Cluster::start(
        topologies::line(),
        Options {
            time_scale: 1.0,
            callback_via: Some(Box::new(move |ml: &str| {
                hook.target.set(ml.to_owned()).unwrap();
                proxy_url
            })),
        },
    );
    let api = c.client();
    let s = json!(c.session(USER));
    let submit = |op: &str, body: Value| -> Result<Value, String> {
        let mut body = body;
        body["sessionId"] = s.clone();
        let started: ProcessStarted = serde_json::from_value(api.call_value(op, &body).map_err(|e| format!("{op}: {e}"))?)
            .map_err(|e| e.to_string())?;
        Ok(json!(started.process_id))
    };

    let first = submit("longPing", json!({"sourceNode": "A", "target": "C", "count": 3, "intervalSec": 0.5}))?;
    let fresh = info(&c, &s, &first)?;
    ensure(!fresh.state.is_terminal(), || format!("fresh process already {:?}", fresh.state))?;
    let early = api.call_value("getResults", &json!({"sessionId": s, "processId": first}));
    ensure(code_of(&early) == Some(ErrorCode::NotReady), || format!("getResults on a running process gave {early:?}"))?;

    let mut pids = vec![first];
    pids.push(submit("parallelPing", json!({"sourceNode": "A", "targets": ["B", "C"], "count": 2, "intervalSec": 0.2}))?);
    pids.push(submit("ensemblePing", json!({"sources": ["A", "B"], "targets": ["C"], "count": 2, "intervalSec": 0.2}))?);
    pids.push(submit("longTraceroute", json!({"sourceNode": "C", "target": "A"}))?);
    pids.push(submit("parallelTraceroute", json!({"sourceNode": "B", "targets": ["A", "C"]}))?);
    pids.push(submit("ensembleTraceroute", json!({"sources": ["A", "C"], "targets": ["B"]}))?);
    pids.push(submit("topology", json!({"nodeList": ["A", "B", "C"]}))?);
    pids.push(submit("longTrain", json!({"srcNode": "A", "dstNodes": ["B", "C"], "nPackets": 20, "sizeBytes": 1500}))?);

    let deadline = Instant::now() + Duration::from_secs(60);
    let mut infos = finish(&c, &s, &pids, deadline)?;
    // Reserves B and C, which the train above held.
    let chirp = submit(
        "longChirp",
        json!({"srcNode": "C", "dstNode": "B", "nPackets": 20, "sizeBytes": 1000, "initialGapUs": 5000.0, "gapRatio": 0.95}),
    )?;
    infos.extend(finish(&c, &s, &[chirp], deadline)?);
    // Late duplicates are still in flight; let them land before counting.
    std::thread::sleep(Duration::from_millis(2500));
    let lines = raw_lines(&c)?;
    ensure(lines.values().all(|&n| n == 1), || {
        format!("duplicate RAW records: {:?}", lines.iter().filter(|(_, &n)| n > 1).collect::<Vec<_>>())
    })?;
    let tasks: usize = infos.iter().map(|i| i.total_tasks).sum();
    for i in &infos {
        let stored = lines.keys().filter(|(p, _)| p == i.process_id.as_str()).count();
        ensure(stored == i.total_tasks, || format!("{}: {stored} RAW records for {} tasks", i.process_id.as_str(), i.total_tasks))?;
    }
    let (received, forwarded) = (proxy.received.load(Ordering::SeqCst), proxy.forwarded.load(Ordering::SeqCst));
    ensure(forwarded > received, || format!("proxy forwarded {forwarded} of {received} callbacks, no duplicates"))?;

    let killed = submit(
        "longChirp",
        json!({"srcNode": "A", "dstNode": "B", "nPackets": 60, "sizeBytes": 1000, "initialGapUs": 50000.0, "gapRatio": 0.98}),
    )?;
    std::thread::sleep(Duration::from_millis(600));
    api.call_value("killProcess", &json!({"sessionId": s, "processId": killed})).map_err(|e| e.to_string())?;
    let k = info(&c, &s, &killed)?;
    ensure(k.state == LifecycleState::Killed, || format!("killed process is {:?}", k.state))?;
    for node in ["A", "B"] {
        let caps: CapabilitiesResponse = serde_json::from_value(c.agent_post(node, "getCapabilities", json!({}))).map_err(|e| e.to_string())?;
        ensure(caps.status == NodeStatus::Free, || format!("{node} is {:?} after kill", caps.status))?;
    }
    let r: ResultsResponse = serde_json::from_value(
        api.call_value("getResults", &json!({"sessionId": s, "processId": killed, "raw": true})).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(r.partial && r.row_count > 0, || format!("killed process results: partial {} with {} rows", r.partial, r.row_count))?;

    Ok(format!(
        "{} processes, {tasks} tasks, one RAW record each despite {forwarded} deliveries of {received} callbacks; kill left {} partial rows and free agents",
        infos.len(),
        r.row_count
    ))
}
