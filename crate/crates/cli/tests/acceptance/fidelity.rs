//! Agents on the simulated backend, driven over their HTTP interface, must
//! reproduce the simulator's output exactly for the same seed.

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sonoma_agent::backend::sim::SimBackend;
use sonoma_agent::backend::Backend;
use sonoma_agent::config::default_backoff;
use sonoma_agent::{Agent, AgentConfig, BackendKind};
use sonoma_core::api::{StartTaskResponse, TaskData};
use sonoma_core::estimator::{align, CapturedPacket, SentPacket};
use sonoma_core::model::*;
use sonoma_core::rows::{from_rows, ping_rows, to_rows, traceroute_rows, TrainCapturedRow, TrainSentRow};
use sonoma_core::simnet::{ping_probes, simulate_chirp, simulate_traceroute, simulate_train, SimLink, SimTopology};

use crate::topologies::node;
use crate::{ensure, Outcome};

const TOPOLOGIES: usize = 100;

/// Spanning tree plus extra links, with random delay, load and loss.
fn random_mesh(rng: &mut ChaCha8Rng) -> SimTopology {
    let n = rng.gen_range(3..8);
    let nodes = (0..n).map(|i| node(&format!("n{i}"), &format!("10.1.0.{}", i + 1), rng.gen_range(10.0..200.0))).collect();
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)) {
            pairs.push((a, b));
        }
    }
    let mut links = Vec::new();
    for (a, b) in pairs {
        let cap = rng.gen_range(5.0..100.0);
        let cross = rng.gen_range(0.0..cap * 0.8);
        let delay_ms = rng.gen_range(0.1..20.0);
        let loss = if rng.gen_bool(0.3) { rng.gen_range(0.0..0.2) } else { 0.0 };
        for (f, t) in [(a, b), (b, a)] {
            links.push(SimLink {
                from: format!("n{f}"),
                to: format!("n{t}"),
                delay_ms,
                capacity_mbps: cap,
                cross_traffic_mbps: cross,
                loss,
            });
        }
    }
    SimTopology::new(nodes, links).unwrap()
}

async fn serve(topo: &SimTopology, node: &str) -> sonoma_agent::server::AgentServer {
    let cfg = AgentConfig {
        node_id: node.into(),
        listen_address: "127.0.0.1:0".into(),
        ml_callback_url: None,
        backend: BackendKind::Sim,
        topology_path: Some("unused".into()),
        capabilities: Capability::ALL.into_iter().collect(),
        max_concurrent_time_sharing: 4,
        sim_time_scale: 0.0,
        callback_backoff_ms: default_backoff(),
        real: None,
    };
    let agent: Arc<Agent> = Agent::new(cfg, Backend::Sim(SimBackend::new(topo.clone(), node).unwrap())).unwrap();
    sonoma_agent::server::serve(agent).await.unwrap()
}

struct Remote {
    http: reqwest::Client,
    url: String,
}

impl Remote {
    /// Starts the task and polls until its data can be fetched.
    async fn run(&self, spec: TaskSpec) -> Result<Vec<Row>, String> {
        let task = AtomicTask::new("x", spec);
        let r: StartTaskResponse = self
            .http
            .post(format!("{}/instructor/startTask", self.url))
            .json(&task)
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(|e| e.to_string())?
            .json()
            .await
            .map_err(|e| e.to_string())?;
        ensure(r.accepted, || "task not accepted".into())?;
        for _ in 0..10_000 {
            let resp = self
                .http
                .post(format!("{}/instructor/fetchTaskData", self.url))
                .json(&json!({"taskId": task.task_id}))
                .send()
                .await
                .map_err(|e| e.to_string())?;
            if resp.status().is_success() {
                let d: TaskData = resp.json().await.map_err(|e| e.to_string())?;
                ensure(d.state == LifecycleState::Finished, || format!("task ended {:?}", d.state))?;
                return Ok(d.raw_rows);
            }
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
        Err("task never finished".into())
    }
}

async fn one(rng: &mut ChaCha8Rng, http: &reqwest::Client) -> Result<(), String> {
    let topo = random_mesh(rng);
    let n = topo.nodes().len();
    let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
    let j = if i == j { (j + 1) % n } else { j };
    let (sa, da) = (topo.nodes()[i].ip_address.clone(), topo.nodes()[j].ip_address.clone());
    let s_srv = serve(&topo, &topo.nodes()[i].node_id).await;
    let d_srv = serve(&topo, &topo.nodes()[j].node_id).await;
    let src = Remote { http: http.clone(), url: s_srv.url() };
    let dst = Remote { http: http.clone(), url: d_srv.url() };
    let seed: u64 = rng.gen();
    let err = |e: sonoma_core::Error| e.to_string();

    let (count, size) = (rng.gen_range(1..10), rng.gen_range(28..1500));
    let got = src.run(TaskSpec::Ping(PingParams { target: da.clone(), count, size_bytes: size, interval_sec: 0.5, seed })).await?;
    let oracle = ping_probes(&topo, &sa, &da, count, size, seed).map_err(err)?;
    ensure(got == to_rows(&ping_rows(&sa, &da, size, &oracle)), || format!("ping {sa} -> {da} seed {seed}"))?;

    let got = src.run(TaskSpec::Traceroute(TracerouteParams { target: da.clone(), size_bytes: size, seed })).await?;
    let oracle = simulate_traceroute(&topo, &sa, &da, size, seed).map_err(err)?;
    ensure(got == to_rows(&traceroute_rows(&sa, &oracle)), || format!("traceroute {sa} -> {da} seed {seed}"))?;

    let chirp = ChirpParams {
        destination: da.clone(),
        n_packets: rng.gen_range(2..64),
        size_bytes: rng.gen_range(100..1500),
        initial_gap_us: rng.gen_range(100.0..5000.0),
        gap_ratio: rng.gen_range(0.8..0.99),
        seed,
    };
    let oracle = simulate_chirp(&topo, &sa, &chirp).map_err(err)?;
    let sent: Vec<SentPacket> = from_rows(&src.run(TaskSpec::ChirpSend(chirp.clone())).await?).map_err(err)?;
    let captured: Vec<CapturedPacket> =
        from_rows(&dst.run(TaskSpec::Capture(CaptureParams { source: sa.clone(), chirp })).await?).map_err(err)?;
    ensure(align(&sent, &captured) == oracle, || format!("chirp {sa} -> {da} seed {seed}"))?;

    let train = TrainParams { destinations: vec![da.clone()], n_packets: rng.gen_range(2..100), size_bytes: 1500, seed };
    let oracle = simulate_train(&topo, &sa, &train).map_err(err)?;
    let sent: Vec<TrainSentRow> = from_rows(&src.run(TaskSpec::TrainSend(train.clone())).await?).map_err(err)?;
    let want: Vec<_> = oracle.iter().map(|o| (o.packet_index, o.send_timestamp_us, o.destination.clone())).collect();
    let have: Vec<_> = sent.iter().map(|s| (s.packet_index, s.send_timestamp_us, s.destination.clone())).collect();
    ensure(have == want, || format!("train send {sa} -> {da} seed {seed}"))?;
    let got: Vec<TrainCapturedRow> =
        from_rows(&dst.run(TaskSpec::TrainRecv(TrainRecvParams { source: sa.clone(), train })).await?).map_err(err)?;
    let want: Vec<(u32, i64)> = oracle.iter().filter_map(|o| o.recv_timestamp_us.map(|r| (o.packet_index, r))).collect();
    let have: Vec<(u32, i64)> = got.iter().map(|g| (g.packet_index, g.recv_timestamp_us)).collect();
    ensure(have == want, || format!("train capture {sa} -> {da} seed {seed}"))?;

    s_srv.shutdown().await;
    d_srv.shutdown().await;
    Ok(())
}

pub fn criterion_8() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let http = reqwest::Client::new();
        for k in 0..TOPOLOGIES {
            one(&mut rng, &http).await.map_err(|e| format!("topology {k}: {e}"))?;
        }
        Ok(format!("{TOPOLOGIES} random topologies; ping, traceroute, chirp and train identical to the simulator"))
    })
}
