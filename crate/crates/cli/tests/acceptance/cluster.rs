//! Daemons as child processes: one `mld` plus one `agent` per sim node.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::os::unix::process::CommandExt;
use std::process::{Child, ChildStdout, Command, Stdio};

use serde_json::{json, Value};
use sonoma_cli::client::{Client, ClientConfig};
use sonoma_core::model::SessionId;
use sonoma_core::simnet::SimTopology;

pub const USER: &str = "acceptance";
pub const PASSWORD: &str = "secret";

pub struct Daemon {
    child: Child,
    _stdout: BufReader<ChildStdout>,
    pub url: String,
}

impl Daemon {
    /// Starts `bin --config <config>` and waits for its address line.
    pub fn spawn(bin: &str, config: &Path) -> Daemon {
        let mut cmd = Command::new(bin);
        // SAFETY: prctl is async-signal-safe.
        unsafe {
            cmd.pre_exec(|| {
                libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL);
                Ok(())
            });
        }
        let mut child = cmd
            .arg("--config")
            .arg(config)
            .env("SONOMA_LOG", "error")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap_or_else(|e| panic!("{bin}: {e}"));
        let mut stdout = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        stdout.read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("{bin} did not start: {line:?}"))
            .to_owned();
        Daemon { child, _stdout: stdout, url: format!("http://{addr}") }
    }

    /// SIGKILL, no chance to flush anything.
    pub fn kill9(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.kill9();
    }
}

/// Maps the ML's URL to the callback base handed to agents.
pub type CallbackVia = Box<dyn FnOnce(&str) -> String>;

pub struct Options {
    pub time_scale: f64,
    pub callback_via: Option<CallbackVia>,
}

impl Default for Options {
    fn default() -> Self {
        Self { time_scale: 0.0, callback_via: None }
    }
}

pub struct Cluster {
    pub dir: tempfile::TempDir,
    pub topo: SimTopology,
    pub ml: Daemon,
    pub agents: BTreeMap<String, Daemon>,
    ml_config: PathBuf,
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

impl Cluster {
    pub fn start(topo: SimTopology, opts: Options) -> Cluster {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::write(p.join("topo.json"), serde_json::to_vec(&topo).unwrap()).unwrap();
        write_json(&p.join("accounts.json"), &json!({"accounts": [{"user": USER, "credential": PASSWORD}]}));
        let ml_config = p.join("mld.json");
        write_json(
            &ml_config,
            &json!({
                "listenAddress": "127.0.0.1:0",
                "accountsPath": p.join("accounts.json"),
                "voPath": p.join("vo"),
                "healthIntervalSec": 3600.0,
            }),
        );
        let ml = Daemon::spawn(env!("CARGO_BIN_EXE_mld"), &ml_config);
        let callback = match opts.callback_via {
            Some(f) => f(&ml.url),
            None => ml.url.clone(),
        };
        let mut agents = BTreeMap::new();
        for n in topo.nodes() {
            let cfg = p.join(format!("agent-{}.json", n.node_id));
            write_json(
                &cfg,
                &json!({
                    "nodeId": n.node_id,
                    "listenAddress": "127.0.0.1:0",
                    "mlCallbackUrl": callback,
                    "backend": "SIM",
                    "topologyPath": p.join("topo.json"),
                    "capabilities": ["PING", "TRACEROUTE", "CHIRP", "TRAIN"],
                    "simTimeScale": opts.time_scale,
                    "callbackBackoffMs": [100, 400, 1600],
                }),
            );
            let a = Daemon::spawn(env!("CARGO_BIN_EXE_agent"), &cfg);
            agents.insert(n.node_id.clone(), a);
        }
        let c = Cluster { dir, topo, ml, agents, ml_config };
        c.register_all();
        c
    }

    fn register_all(&self) {
        for (id, a) in &self.agents {
            let r = self.post(&self.ml.url, "/admin/agents", json!({"nodeId": id, "url": a.url}));
            assert_eq!(r["nodeId"], json!(id), "{r}");
        }
    }

    /// Kills the ML with SIGKILL and starts it again on the same repository.
    pub fn restart_ml(&mut self) {
        self.ml.kill9();
        self.ml = Daemon::spawn(env!("CARGO_BIN_EXE_mld"), &self.ml_config);
        self.register_all();
    }

    pub fn vo_dir(&self) -> PathBuf {
        self.dir.path().join("vo")
    }

    pub fn post(&self, base: &str, path: &str, body: Value) -> Value {
        let r = reqwest::blocking::Client::new().post(format!("{base}{path}")).json(&body).send().unwrap();
        r.json().unwrap()
    }

    pub fn agent_post(&self, node: &str, op: &str, body: Value) -> Value {
        self.post(&self.agents[node].url, &format!("/instructor/{op}"), body)
    }

    pub fn client(&self) -> Client {
        Client::new(&self.ml.url)
    }

    pub fn config(&self, user: &str, format: &str, zip: bool) -> ClientConfig {
        let credential = if user == USER { PASSWORD } else { "" };
        ClientConfig {
            ml_url: self.ml.url.clone(),
            user: user.into(),
            credential: credential.into(),
            format: format.into(),
            zip,
        }
    }

    pub fn session(&self, user: &str) -> SessionId {
        self.client().open_session(&self.config(user, "CSV", false)).unwrap()
    }

    pub fn address(&self, node: &str) -> String {
        self.topo.node(node).unwrap().ip_address.clone()
    }
}
