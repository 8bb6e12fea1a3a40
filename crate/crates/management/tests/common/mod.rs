#![allow(dead_code)]

use std::sync::Arc;

use sonoma_agent::{AgentConfig, AgentServer, BackendKind};
use sonoma_core::api::{AgentRegistration, RequestSession};
use sonoma_core::model::{Capability, SessionId};
use sonoma_core::simnet::{SimLink, SimNode, SimTopology};
use sonoma_management::auth::{Account, Accounts};
use sonoma_management::{Ml, MlConfig, MlServer};

pub const USER: &str = "alice";
pub const PASSWORD: &str = "wonderland";

pub fn node(id: &str, ip: &str) -> SimNode {
    SimNode { node_id: id.into(), ip_address: ip.into(), line_rate_mbps: 100.0 }
}

pub fn duplex(a: &str, b: &str, delay_ms: f64, cap: f64, cross: f64) -> [SimLink; 2] {
    let l = |from: &str, to: &str| SimLink {
        from: from.into(),
        to: to.into(),
        delay_ms,
        capacity_mbps: cap,
        cross_traffic_mbps: cross,
        loss: 0.0,
    };
    [l(a, b), l(b, a)]
}

/// A - B - C with a 10 Mbps B - C bottleneck.
pub fn line() -> SimTopology {
    let mut links = Vec::new();
    links.extend(duplex("A", "B", 1.0, 100.0, 0.0));
    links.extend(duplex("B", "C", 2.0, 10.0, 0.0));
    SimTopology::new(vec![node("A", "10.0.0.1"), node("B", "10.0.0.2"), node("C", "10.0.0.3")], links).unwrap()
}

pub const ALL: [Capability; 4] = [Capability::Ping, Capability::Traceroute, Capability::Chirp, Capability::Train];

pub struct Bed {
    pub dir: tempfile::TempDir,
    pub topo: SimTopology,
    pub ml: MlServer,
    pub agents: Vec<AgentServer>,
}

pub struct Options {
    pub caps: Vec<(String, Vec<Capability>)>,
    pub time_scale: f64,
    /// Whether agents call back on completion.
    pub callbacks: bool,
    pub tweak: Box<dyn FnOnce(&mut MlConfig)>,
}

impl Default for Options {
    fn default() -> Self {
        Self { caps: Vec::new(), time_scale: 0.0, callbacks: true, tweak: Box::new(|_| {}) }
    }
}

impl Bed {
    pub async fn new(topo: SimTopology) -> Self {
        Self::with(topo, Options::default()).await
    }

    /// An ML plus one sim agent per topology node, all registered and probed.
    pub async fn with(topo: SimTopology, opts: Options) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let topo_path = dir.path().join("topo.json");
        std::fs::write(&topo_path, serde_json::to_string(&topo).unwrap()).unwrap();
        let accounts_path = dir.path().join("accounts.json");
        let accounts = Accounts {
            accounts: vec![Account { user: USER.into(), credential: Some(PASSWORD.into()), sha256: None }],
        };
        std::fs::write(&accounts_path, serde_json::to_string(&accounts).unwrap()).unwrap();
        let mut cfg = MlConfig::new("127.0.0.1:0", dir.path().join("vo"));
        cfg.accounts_path = Some(accounts_path);
        (opts.tweak)(&mut cfg);
        let ml = sonoma_management::start(cfg).await.unwrap();
        let mut agents = Vec::new();
        for n in topo.nodes() {
            let caps = opts
                .caps
                .iter()
                .find(|(id, _)| id == &n.node_id)
                .map_or(ALL.to_vec(), |(_, c)| c.clone());
            let a = sonoma_agent::start(AgentConfig {
                node_id: n.node_id.clone(),
                listen_address: "127.0.0.1:0".into(),
                ml_callback_url: opts.callbacks.then(|| ml.url()),
                backend: BackendKind::Sim,
                topology_path: Some(topo_path.clone()),
                capabilities: caps.into_iter().collect(),
                max_concurrent_time_sharing: 8,
                sim_time_scale: opts.time_scale,
                callback_backoff_ms: vec![50, 200, 800],
                real: None,
            })
            .await
            .unwrap();
            ml.ml
                .register_agent(AgentRegistration { node_id: n.node_id.clone(), url: a.url(), gray_list: None })
                .await
                .unwrap();
            agents.push(a);
        }
        Self { dir, topo, ml, agents }
    }

    pub fn ml(&self) -> &Arc<Ml> {
        &self.ml.ml
    }

    pub fn agent(&self, id: &str) -> &AgentServer {
        self.agents.iter().find(|a| a.agent.config().node_id == id).unwrap()
    }

    pub fn session(&self, zip: bool, format: &str) -> SessionId {
        self.ml()
            .request_session(&RequestSession {
                user: USER.into(),
                credential: PASSWORD.into(),
                zip_results: zip,
                format_results: format.into(),
            })
            .unwrap()
            .session_id
    }

    pub fn guest(&self) -> SessionId {
        self.ml()
            .request_session(&RequestSession {
                user: "guest".into(),
                credential: String::new(),
                zip_results: false,
                format_results: "CSV".into(),
            })
            .unwrap()
            .session_id
    }

    pub fn address(&self, id: &str) -> String {
        self.topo.node(id).unwrap().ip_address.clone()
    }
}

/// Polls until the process leaves SCHEDULED/RUNNING.
pub async fn settle(ml: &Arc<Ml>, session: &SessionId, pid: &sonoma_core::model::ProcessId) -> sonoma_core::api::ProcessInfo {
    let req = sonoma_core::api::ProcessRequest { session_id: session.clone(), process_id: pid.clone() };
    for _ in 0..2000 {
        let info = ml.process_info(&req).unwrap();
        if info.state.is_terminal() {
            return info;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("process did not settle");
}
