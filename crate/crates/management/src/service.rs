//! The management layer's operations, independent of HTTP.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use sonoma_core::api::*;
use sonoma_core::estimator::{align, default_sweep, estimate, CapturedPacket, SentPacket};
use sonoma_core::model::*;
use sonoma_core::rows::{
    from_rows, ping_result, to_rows, traceroute_result, BandwidthRow, PingRow, TracerouteRow, TrainCapturedRow,
    TrainSentRow,
};
use sonoma_core::topology::{edge_rows, merge_routes, CollectedRoute};
use sonoma_core::vo::{flatten_groups, VoKey, VoStore};
use sonoma_core::vo::format::format_output;
use sonoma_core::{Error, ErrorCode, Result};
use tokio::task::JoinSet;

use crate::auth::{Accounts, PrivilegeSchema, Sessions};
use crate::client::AgentClient;
use crate::config::MlConfig;
use crate::process::{composite_expected_sec, Post, Process, SlotStatus};
use crate::registry::{load_registrations, AgentView, Registry};

const WAIT_TICK: Duration = Duration::from_secs(1);

pub struct Ml {
    config: MlConfig,
    accounts: Accounts,
    sessions: Sessions,
    registry: Registry,
    vo: Arc<VoStore>,
    client: AgentClient,
    processes: Mutex<HashMap<ProcessId, Arc<Process>>>,
    task_index: Mutex<HashMap<TaskId, ProcessId>>,
}

/// Derives a per-task loss seed from the task id.
fn seed_of(id: &TaskId) -> u64 {
    let s = id.as_str();
    u64::from_str_radix(&s[..s.len().min(16)], 16).unwrap_or(0)
}

fn with_seed(mut spec: TaskSpec, seed: u64) -> TaskSpec {
    match &mut spec {
        TaskSpec::Ping(p) => p.seed = seed,
        TaskSpec::Traceroute(p) => p.seed = seed,
        TaskSpec::ChirpSend(p) => p.seed = seed,
        TaskSpec::Capture(p) => p.chirp.seed = seed,
        TaskSpec::TrainSend(p) => p.seed = seed,
        TaskSpec::TrainRecv(p) => p.train.seed = seed,
    }
    spec
}

fn new_task(agent: &AgentView, spec: TaskSpec) -> (AtomicTask, String) {
    let mut t = AtomicTask::new(agent.node_id.clone(), spec);
    t.spec = with_seed(t.spec, seed_of(&t.task_id));
    (t, agent.url.clone())
}

/// Shared seed for the two ends of one chirp or train.
fn shared_seed() -> u64 {
    seed_of(&TaskId::generate())
}

fn require_async(schema: &PrivilegeSchema) -> Result<()> {
    if schema.async_allowed {
        Ok(())
    } else {
        Err(Error::new(ErrorCode::AsyncForbidden, "this session may not run asynchronous measurements"))
    }
}

fn require_node_cap(schema: &PrivilegeSchema, nodes: usize) -> Result<()> {
    if nodes > schema.max_nodes_per_composite as usize {
        return Err(Error::new(
            ErrorCode::Quota,
            format!("{nodes} nodes exceed the limit of {}", schema.max_nodes_per_composite),
        ));
    }
    Ok(())
}

fn non_empty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::param(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

impl Ml {
    pub fn new(config: MlConfig) -> Result<Arc<Self>> {
        config.validate()?;
        let accounts = match &config.accounts_path {
            Some(p) => Accounts::load(p)?,
            None => Accounts::default(),
        };
        let vo = Arc::new(VoStore::open(&config.vo_path)?);
        let registry = Registry::new(config.health_miss_limit);
        if let Some(p) = &config.agent_registry_path {
            for r in load_registrations(p)? {
                registry.register(r);
            }
        }
        Ok(Arc::new(Self {
            sessions: Sessions::new(config.quotas),
            accounts,
            registry,
            vo,
            client: AgentClient::default(),
            processes: Mutex::default(),
            task_index: Mutex::default(),
            config,
        }))
    }

    pub fn config(&self) -> &MlConfig {
        &self.config
    }

    pub fn vo(&self) -> &Arc<VoStore> {
        &self.vo
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    // ---- registry and health ------------------------------------------------

    pub async fn probe_all(&self) {
        let mut set = JoinSet::new();
        for (node, url) in self.registry.targets() {
            let client = self.client.clone();
            set.spawn(async move { (node, client.capabilities(&url).await) });
        }
        while let Some(Ok((node, outcome))) = set.join_next().await {
            self.registry.record_probe(&node, outcome);
        }
    }

    /// Probes every agent each health interval until the ML is dropped.
    pub fn spawn_health_loop(self: &Arc<Self>) {
        let weak = Arc::downgrade(self);
        let every = Duration::from_secs_f64(self.config.health_interval_sec);
        tokio::spawn(async move {
            loop {
                let Some(ml) = weak.upgrade() else { return };
                ml.probe_all().await;
                drop(ml);
                tokio::time::sleep(every).await;
            }
        });
    }

    pub async fn register_agent(&self, r: AgentRegistration) -> Result<NodeDescriptor> {
        let node = r.node_id.clone();
        let url = r.url.clone();
        self.registry.register(r);
        let probe = self.client.capabilities(&url).await;
        let failed = probe.as_ref().err().cloned();
        self.registry.record_probe(&node, probe);
        if let Some(e) = failed {
            return Err(e);
        }
        self.registry
            .node_list(None)
            .into_iter()
            .find(|d| d.node_id == node)
            .ok_or_else(|| Error::new(ErrorCode::NodeUnavailable, format!("{node} is not reachable")))
    }

    // ---- sessions -----------------------------------------------------------

    pub fn version(&self) -> VersionResponse {
        VersionResponse {
            version: self.config.version.clone(),
        }
    }

    pub fn request_session(&self, r: &RequestSession) -> Result<SessionResponse> {
        let format: OutputFormat = r.format_results.parse()?;
        let privilege = self.accounts.authenticate(&r.user, &r.credential)?;
        let s = self.sessions.open(&r.user, privilege, r.zip_results, format);
        Ok(SessionResponse { session_id: s.id })
    }

    pub async fn close_session(&self, id: &SessionId) -> Result<Ack> {
        self.sessions.close(id)?;
        let owned: Vec<Arc<Process>> = self
            .processes
            .lock()
            .unwrap()
            .values()
            .filter(|p| &p.session == id)
            .cloned()
            .collect();
        for p in owned {
            self.kill(&p).await;
        }
        Ok(Ack::YES)
    }

    fn admit(&self, id: &SessionId) -> Result<(Session, PrivilegeSchema)> {
        self.sessions.admit(id)
    }

    pub fn get_node_list(&self, r: &GetNodeList) -> Result<NodeListResponse> {
        self.admit(&r.session_id)?;
        let filter = match r.filter.as_deref() {
            None | Some("ALL") => None,
            Some(f) => Some(
                serde_json::from_value::<Capability>(serde_json::Value::String(f.to_owned()))
                    .map_err(|_| Error::param(format!("unknown node filter {f:?}")))?,
            ),
        };
        Ok(NodeListResponse {
            nodes: self.registry.node_list(filter),
        })
    }

    pub fn accounting(&self) -> Accounting {
        Accounting {
            sessions: self.sessions.accounting(),
            agents: self.registry.accounting(),
        }
    }

    // ---- task construction --------------------------------------------------

    fn agent_with(&self, name: &str, cap: Capability) -> Result<AgentView> {
        let a = self.registry.lookup(name)?;
        a.require(cap)?;
        Ok(a)
    }

    fn check(&self, agent: &AgentView, spec: &TaskSpec, sender_line_rate_mbps: f64) -> Result<()> {
        self.config
            .security_policy
            .check_task(spec, agent.gray_list.as_ref(), sender_line_rate_mbps)
    }

    fn ping_task(&self, source: &str, target: &str, o: &PingOptions) -> Result<(AtomicTask, String)> {
        let agent = self.agent_with(source, Capability::Ping)?;
        let spec = TaskSpec::Ping(PingParams {
            target: self.registry.resolve_target(target),
            count: o.count,
            size_bytes: o.size_bytes,
            interval_sec: o.interval_sec,
            seed: 0,
        });
        self.check(&agent, &spec, agent.line_rate_mbps)?;
        Ok(new_task(&agent, spec))
    }

    fn traceroute_task(&self, source: &str, target: &str, size_bytes: u32) -> Result<(AtomicTask, String)> {
        let agent = self.agent_with(source, Capability::Traceroute)?;
        let target = self.registry.resolve_target(target);
        if target == agent.address {
            return Err(Error::param("traceroute source and target are the same node"));
        }
        let spec = TaskSpec::Traceroute(TracerouteParams { target, size_bytes, seed: 0 });
        self.check(&agent, &spec, agent.line_rate_mbps)?;
        Ok(new_task(&agent, spec))
    }

    /// Capture on the destination first, then the sender.
    fn chirp_tasks(&self, src: &str, dst: &str, chirp: impl FnOnce(&AgentView, &AgentView) -> ChirpParams) -> Result<Vec<(AtomicTask, String)>> {
        let s = self.agent_with(src, Capability::Chirp)?;
        let d = self.agent_with(dst, Capability::Chirp)?;
        if s.node_id == d.node_id {
            return Err(Error::param("source and destination are the same node"));
        }
        let mut params = chirp(&s, &d);
        params.seed = shared_seed();
        let send = TaskSpec::ChirpSend(params.clone());
        let capture = TaskSpec::Capture(CaptureParams { source: s.address.clone(), chirp: params });
        self.check(&s, &send, s.line_rate_mbps)?;
        self.check(&d, &capture, s.line_rate_mbps)?;
        let c = AtomicTask::new(d.node_id.clone(), capture);
        let t = AtomicTask::new(s.node_id.clone(), send);
        Ok(vec![(c, d.url.clone()), (t, s.url.clone())])
    }

    fn train_tasks(&self, r: &TrainRequest) -> Result<Vec<(AtomicTask, String)>> {
        non_empty(&r.dst_nodes, "dstNodes")?;
        let s = self.agent_with(&r.src_node, Capability::Train)?;
        let dsts = r
            .dst_nodes
            .iter()
            .map(|d| self.agent_with(d, Capability::Train))
            .collect::<Result<Vec<_>>>()?;
        let mut seen = BTreeSet::new();
        for d in &dsts {
            if d.node_id == s.node_id || !seen.insert(d.node_id.clone()) {
                return Err(Error::param("train destinations must be distinct and differ from the source"));
            }
        }
        let train = TrainParams {
            destinations: dsts.iter().map(|d| d.address.clone()).collect(),
            n_packets: r.n_packets,
            size_bytes: r.size_bytes,
            seed: shared_seed(),
        };
        let send = TaskSpec::TrainSend(train.clone());
        self.check(&s, &send, s.line_rate_mbps)?;
        let mut out = Vec::new();
        for d in &dsts {
            let recv = TaskSpec::TrainRecv(TrainRecvParams { source: s.address.clone(), train: train.clone() });
            self.check(d, &recv, s.line_rate_mbps)?;
            out.push((AtomicTask::new(d.node_id.clone(), recv), d.url.clone()));
        }
        out.push((AtomicTask::new(s.node_id.clone(), send), s.url.clone()));
        Ok(out)
    }

    // ---- process lifecycle --------------------------------------------------

    fn lookup_process(&self, session: &SessionId, id: &ProcessId) -> Result<Arc<Process>> {
        self.processes
            .lock()
            .unwrap()
            .get(id)
            .filter(|p| &p.session == session)
            .cloned()
            .ok_or_else(|| Error::new(ErrorCode::UnknownProcess, format!("no process {}", id.as_str())))
    }

    /// Registers the process and starts its tasks. Reserving processes start
    /// their tasks in order and hold all reservations or none.
    async fn submit(
        self: &Arc<Self>,
        session: &Session,
        kind: MeasurementKind,
        post: Post,
        tasks: Vec<(AtomicTask, String)>,
    ) -> Result<Arc<Process>> {
        let reserving = tasks.iter().any(|(t, _)| t.resource_mode == ResourceMode::TimeReserving);
        let ids: Vec<TaskId> = tasks.iter().map(|(t, _)| t.task_id.clone()).collect();
        let p = Arc::new(Process::new(session.id.clone(), kind, post, tasks));
        self.processes.lock().unwrap().insert(p.id.clone(), p.clone());
        {
            let mut index = self.task_index.lock().unwrap();
            for id in &ids {
                index.insert(id.clone(), p.id.clone());
            }
        }
        let outcome = if reserving {
            let mut r = Ok(());
            for id in &ids {
                r = self.dispatch(&p, id).await;
                if r.is_err() {
                    break;
                }
            }
            r
        } else {
            let mut set = JoinSet::new();
            for id in ids.clone() {
                let (ml, p) = (self.clone(), p.clone());
                set.spawn(async move { ml.dispatch(&p, &id).await });
            }
            let mut r = Ok(());
            while let Some(j) = set.join_next().await {
                let j = j.map_err(|e| Error::new(ErrorCode::Internal, e.to_string())).and_then(|x| x);
                if r.is_ok() {
                    r = j;
                }
            }
            r
        };
        if let Err(e) = outcome {
            self.abandon(&p, e.clone()).await;
            return Err(e);
        }
        {
            let mut inner = p.lock();
            inner.expected_duration_sec = composite_expected_sec(&inner.slots);
        }
        // callbacks may all have landed during dispatch
        self.maybe_finalize(&p).await;
        Ok(p)
    }

    async fn dispatch(&self, p: &Process, id: &TaskId) -> Result<()> {
        let (task, url) = {
            let mut inner = p.lock();
            let slot = inner.slot_mut(id).expect("task belongs to process");
            // in flight before the request: an early callback must not be dropped
            slot.status = SlotStatus::InFlight;
            slot.dispatched_at = Some(Instant::now());
            (slot.task.clone(), slot.url.clone())
        };
        let r = self.client.start_task(&url, &task).await;
        let mut inner = p.lock();
        let slot = inner.slot_mut(id).expect("task belongs to process");
        match r {
            Ok(resp) if resp.accepted => {
                slot.expected_sec = resp.expected_duration_sec;
                self.registry.count_dispatch(&task.agent);
                Ok(())
            }
            Ok(resp) => {
                slot.status = SlotStatus::Done;
                let code = resp.reason.unwrap_or(ErrorCode::Busy);
                Err(Error::new(code, format!("{} refused the task ({})", task.agent, code.as_str())))
            }
            Err(e) => {
                slot.status = SlotStatus::Done;
                Err(e)
            }
        }
    }

    /// Undoes a failed submission: aborts whatever started and marks the
    /// process FAILED.
    async fn abandon(&self, p: &Process, e: Error) {
        let started: Vec<(TaskId, String)> = {
            let mut inner = p.lock();
            inner.settling = true;
            inner
                .slots
                .iter_mut()
                .filter(|s| s.status != SlotStatus::Done)
                .map(|s| {
                    s.status = SlotStatus::Done;
                    (s.task.task_id.clone(), s.url.clone())
                })
                .collect()
        };
        for (id, url) in started {
            if let Err(err) = self.client.abort_task(&url, &id).await {
                tracing::warn!(task = id.as_str(), "abort after failed submission: {err}");
            }
        }
        let mut inner = p.lock();
        inner.error = Some(e);
        inner.partial = true;
        p.set_state(&mut inner, LifecycleState::Failed);
    }

    /// Pulls one task's rows into the VO, at most once per task. Safe under
    /// duplicate and concurrent calls.
    pub fn task_known(&self, id: &TaskId) -> Result<()> {
        self.owner_of(id).map(|_| ())
    }

    fn owner_of(&self, id: &TaskId) -> Result<ProcessId> {
        self.task_index
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::new(ErrorCode::UnknownTask, format!("no task {}", id.as_str())))
    }

    pub async fn complete_task(self: &Arc<Self>, id: &TaskId) -> Result<()> {
        let pid = self.owner_of(id)?;
        let p = self.processes.lock().unwrap().get(&pid).cloned().expect("indexed process exists");
        let url = {
            let mut inner = p.lock();
            let slot = inner.slot_mut(id).expect("indexed task exists");
            if slot.status != SlotStatus::InFlight {
                return Ok(());
            }
            slot.status = SlotStatus::Fetching;
            slot.url.clone()
        };
        match self.pull(&p, id, &url).await {
            Ok(()) => {
                {
                    let mut inner = p.lock();
                    if inner.state == LifecycleState::Scheduled {
                        p.set_state(&mut inner, LifecycleState::Running);
                    }
                }
                self.maybe_finalize(&p).await;
                Ok(())
            }
            Err(e) => {
                if let Some(slot) = p.lock().slot_mut(id) {
                    slot.status = SlotStatus::InFlight;
                }
                if e.code == ErrorCode::NotReady {
                    Ok(())
                } else {
                    Err(e)
                }
            }
        }
    }

    /// Fetches and stores a claimed (FETCHING) task, then marks it done.
    async fn pull(&self, p: &Process, id: &TaskId, url: &str) -> Result<()> {
        let data = self.client.fetch_task_data(url, id).await?;
        if !data.raw_rows.is_empty() {
            let key = VoKey {
                session_id: p.session.clone(),
                process_id: p.id.clone(),
                task_id: Some(id.clone()),
                layer: Layer::Raw,
            };
            self.store(key, p.kind, data.raw_rows.clone()).await?;
        }
        let mut inner = p.lock();
        let slot = inner.slot_mut(id).expect("task belongs to process");
        slot.status = SlotStatus::Done;
        slot.final_state = Some(data.state);
        slot.rows = data.raw_rows;
        Ok(())
    }

    /// Durable store; an existing identical key counts as stored.
    async fn store(&self, key: VoKey, kind: MeasurementKind, rows: Vec<Row>) -> Result<()> {
        let vo = self.vo.clone();
        let r = tokio::task::spawn_blocking(move || vo.store(key, kind, rows))
            .await
            .map_err(|e| Error::new(ErrorCode::Internal, e.to_string()))?;
        match r {
            Err(e) if e.code == ErrorCode::DuplicateKey => Ok(()),
            r => r,
        }
    }

    /// Runs post-processing once every task is done.
    async fn maybe_finalize(&self, p: &Process) {
        {
            let mut inner = p.lock();
            let ready = !inner.settling
                && !inner.state.is_terminal()
                && inner.slots.iter().all(|s| s.status == SlotStatus::Done);
            if !ready {
                return;
            }
            inner.settling = true;
        }
        let (slots, failed) = {
            let inner = p.lock();
            let failed = inner.slots.iter().any(|s| s.final_state != Some(LifecycleState::Finished));
            (inner.slots.clone(), failed)
        };
        let outcome = if failed {
            Err(Error::new(ErrorCode::AgentError, "an agent task did not finish"))
        } else {
            self.post_process(p, &slots).await
        };
        let mut inner = p.lock();
        match outcome {
            Ok(processed) => {
                inner.processed = processed;
                p.set_state(&mut inner, LifecycleState::Finished);
            }
            Err(e) => {
                inner.partial = failed;
                inner.error = Some(e);
                p.set_state(&mut inner, LifecycleState::Failed);
            }
        }
    }

    async fn post_process(&self, p: &Process, slots: &[crate::process::Slot]) -> Result<Option<Vec<Row>>> {
        let rows_of = |id: &TaskId| -> &[Row] {
            slots.iter().find(|s| &s.task.task_id == id).map_or(&[], |s| &s.rows)
        };
        let key = |task_id: Option<TaskId>| VoKey {
            session_id: p.session.clone(),
            process_id: p.id.clone(),
            task_id,
            layer: Layer::Processed,
        };
        let processed: Vec<Row> = match &p.post {
            Post::None => return Ok(None),
            Post::Topology => {
                let mut routes = Vec::new();
                for s in slots {
                    let rows: Vec<TracerouteRow> = from_rows(&s.rows)?;
                    let Some(first) = rows.first() else { continue };
                    routes.push(CollectedRoute {
                        source: first.source.clone(),
                        trace: traceroute_result(&first.target, &rows),
                    });
                }
                to_rows(&edge_rows(&merge_routes(&routes)))
            }
            Post::Chirp { send, capture } => {
                let sent: Vec<SentPacket> = from_rows(rows_of(send))?;
                let got: Vec<CapturedPacket> = from_rows(rows_of(capture))?;
                to_rows(&align(&sent, &got))
            }
            Post::Train { send, recv } => {
                let sent: Vec<TrainSentRow> = from_rows(rows_of(send))?;
                let mut got: HashMap<(String, u32), i64> = HashMap::new();
                for r in recv {
                    for c in from_rows::<TrainCapturedRow>(rows_of(r))? {
                        got.entry((c.destination, c.packet_index)).or_insert(c.recv_timestamp_us);
                    }
                }
                let recs: Vec<TrainRecord> = sent
                    .into_iter()
                    .map(|s| TrainRecord {
                        packet_index: s.packet_index,
                        send_timestamp_us: s.send_timestamp_us,
                        recv_timestamp_us: got.get(&(s.destination.clone(), s.packet_index)).copied(),
                        size_bytes: s.size_bytes,
                        destination: s.destination,
                    })
                    .collect();
                to_rows(&recs)
            }
            Post::Bandwidth { send, capture, source, destination } => {
                let sent: Vec<SentPacket> = from_rows(rows_of(send))?;
                let got: Vec<CapturedPacket> = from_rows(rows_of(capture))?;
                let aligned = align(&sent, &got);
                // raw evidence first, whatever the estimator says
                if !aligned.is_empty() {
                    self.store(key(Some(capture.clone())), p.kind, to_rows(&aligned)).await?;
                }
                let e = estimate(&aligned)?;
                to_rows(&[BandwidthRow {
                    source: source.clone(),
                    destination: destination.clone(),
                    bandwidth_mbps: e.bandwidth_mbps,
                    excursion_start: e.excursion_start,
                }])
            }
        };
        if !processed.is_empty() {
            self.store(key(None), p.kind, processed.clone()).await?;
        }
        Ok(Some(processed))
    }

    /// Aborts all unfinished tasks, keeps their partial rows and marks the
    /// process KILLED. No-op for terminal processes.
    async fn kill(&self, p: &Process) {
        let claimed: Vec<(TaskId, String)> = {
            let mut inner = p.lock();
            if inner.state.is_terminal() || inner.settling {
                return;
            }
            inner.settling = true;
            inner
                .slots
                .iter_mut()
                .filter_map(|s| match s.status {
                    SlotStatus::InFlight => {
                        s.status = SlotStatus::Fetching;
                        Some((s.task.task_id.clone(), s.url.clone()))
                    }
                    SlotStatus::Pending => {
                        s.status = SlotStatus::Done;
                        None
                    }
                    _ => None,
                })
                .collect()
        };
        let mut set = JoinSet::new();
        for (id, url) in claimed {
            let client = self.client.clone();
            set.spawn(async move {
                if let Err(e) = client.abort_task(&url, &id).await {
                    tracing::warn!(task = id.as_str(), "abort failed: {e}");
                }
                (id, url)
            });
        }
        while let Some(Ok((id, url))) = set.join_next().await {
            if let Err(e) = self.pull(p, &id, &url).await {
                tracing::warn!(task = id.as_str(), "no partial data: {e}");
                if let Some(s) = p.lock().slot_mut(&id) {
                    s.status = SlotStatus::Done;
                }
            }
        }
        // a completion racing with the kill may still be storing; wait for it
        loop {
            let busy = p.lock().slots.iter().any(|s| s.status == SlotStatus::Fetching);
            if !busy {
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        let mut inner = p.lock();
        inner.partial = true;
        p.set_state(&mut inner, LifecycleState::Killed);
    }

    /// Pulls tasks whose expected duration has passed without a callback.
    fn poll_overdue(self: &Arc<Self>, p: &Process) {
        let due: Vec<TaskId> = p
            .lock()
            .slots
            .iter()
            .filter(|s| s.status == SlotStatus::InFlight)
            .filter(|s| s.dispatched_at.is_some_and(|t| t.elapsed().as_secs_f64() >= s.expected_sec))
            .map(|s| s.task.task_id.clone())
            .collect();
        for id in due {
            let ml = self.clone();
            tokio::spawn(async move {
                if let Err(e) = ml.complete_task(&id).await {
                    tracing::debug!(task = id.as_str(), "poll failed: {e}");
                }
            });
        }
    }

    /// Blocks until the process is terminal; kills it at the deadline.
    async fn wait(self: &Arc<Self>, p: &Arc<Process>) -> Result<LifecycleState> {
        let expected = p.lock().expected_duration_sec;
        let deadline = Instant::now() + Duration::from_secs_f64(2.0 * expected + 5.0);
        let mut rx = p.subscribe();
        loop {
            let s = *rx.borrow_and_update();
            if s.is_terminal() {
                return Ok(s);
            }
            if Instant::now() >= deadline {
                self.kill(p).await;
                return Err(Error::new(ErrorCode::Timeout, "measurement did not finish in time"));
            }
            tokio::select! {
                _ = rx.changed() => {}
                _ = tokio::time::sleep(WAIT_TICK) => self.poll_overdue(p),
            }
        }
    }

    /// Waits and returns the process's rows: processed if any, else the
    /// rows of its tasks in order.
    async fn run_sync(self: &Arc<Self>, p: &Arc<Process>) -> Result<Vec<crate::process::Slot>> {
        match self.wait(p).await? {
            LifecycleState::Finished => Ok(p.lock().slots.clone()),
            LifecycleState::Killed => Err(Error::new(ErrorCode::AgentError, "measurement was killed")),
            _ => Err(p
                .lock()
                .error
                .clone()
                .unwrap_or_else(|| Error::new(ErrorCode::AgentError, "measurement failed"))),
        }
    }

    fn started(p: &Process) -> ProcessStarted {
        ProcessStarted {
            process_id: p.id.clone(),
            expected_duration_sec: p.lock().expected_duration_sec,
        }
    }

    // ---- client operations --------------------------------------------------

    pub async fn short_ping(self: &Arc<Self>, r: &PingRequest) -> Result<ShortPingResponse> {
        let (session, _) = self.admit(&r.session_id)?;
        let task = self.ping_task(&r.source_node, &r.target, &r.options)?;
        let p = self.submit(&session, MeasurementKind::Ping, Post::None, vec![task]).await?;
        let slots = self.run_sync(&p).await?;
        let rows: Vec<PingRow> = from_rows(&slots[0].rows)?;
        let result = ping_result(&rows).ok_or_else(|| Error::new(ErrorCode::AgentError, "ping produced no rows"))?;
        Ok(ShortPingResponse { process_id: p.id.clone(), result })
    }

    pub async fn long_ping(self: &Arc<Self>, r: &PingRequest) -> Result<ProcessStarted> {
        let (session, schema) = self.admit(&r.session_id)?;
        require_async(&schema)?;
        let task = self.ping_task(&r.source_node, &r.target, &r.options)?;
        let p = self.submit(&session, MeasurementKind::Ping, Post::None, vec![task]).await?;
        Ok(Self::started(&p))
    }

    pub async fn parallel_ping(self: &Arc<Self>, r: &ParallelPingRequest) -> Result<ProcessStarted> {
        self.ensemble_ping(&EnsemblePingRequest {
            session_id: r.session_id.clone(),
            sources: vec![r.source_node.clone()],
            targets: r.targets.clone(),
            options: r.options.clone(),
        })
        .await
    }

    pub async fn ensemble_ping(self: &Arc<Self>, r: &EnsemblePingRequest) -> Result<ProcessStarted> {
        let (session, schema) = self.admit(&r.session_id)?;
        require_async(&schema)?;
        non_empty(&r.sources, "sources")?;
        non_empty(&r.targets, "targets")?;
        require_node_cap(&schema, self.distinct_nodes(&r.sources, &r.targets))?;
        let mut tasks = Vec::new();
        for s in &r.sources {
            for t in &r.targets {
                tasks.push(self.ping_task(s, t, &r.options)?);
            }
        }
        let p = self.submit(&session, MeasurementKind::Ping, Post::None, tasks).await?;
        Ok(Self::started(&p))
    }

    pub async fn short_traceroute(self: &Arc<Self>, r: &TracerouteRequest) -> Result<ShortTracerouteResponse> {
        let (session, _) = self.admit(&r.session_id)?;
        let task = self.traceroute_task(&r.source_node, &r.target, r.size_bytes)?;
        let target = match &task.0.spec {
            TaskSpec::Traceroute(t) => t.target.clone(),
            _ => unreachable!(),
        };
        let p = self.submit(&session, MeasurementKind::Traceroute, Post::None, vec![task]).await?;
        let slots = self.run_sync(&p).await?;
        let rows: Vec<TracerouteRow> = from_rows(&slots[0].rows)?;
        Ok(ShortTracerouteResponse {
            process_id: p.id.clone(),
            result: traceroute_result(&target, &rows),
        })
    }

    pub async fn long_traceroute(self: &Arc<Self>, r: &TracerouteRequest) -> Result<ProcessStarted> {
        let (session, schema) = self.admit(&r.session_id)?;
        require_async(&schema)?;
        let task = self.traceroute_task(&r.source_node, &r.target, r.size_bytes)?;
        let p = self.submit(&session, MeasurementKind::Traceroute, Post::None, vec![task]).await?;
        Ok(Self::started(&p))
    }

    pub async fn parallel_traceroute(self: &Arc<Self>, r: &ParallelTracerouteRequest) -> Result<ProcessStarted> {
        self.ensemble_traceroute(&EnsembleTracerouteRequest {
            session_id: r.session_id.clone(),
            sources: vec![r.source_node.clone()],
            targets: r.targets.clone(),
            size_bytes: r.size_bytes,
        })
        .await
    }

    /// Every source to every other target; self pairs are skipped.
    pub async fn ensemble_traceroute(self: &Arc<Self>, r: &EnsembleTracerouteRequest) -> Result<ProcessStarted> {
        let (session, schema) = self.admit(&r.session_id)?;
        require_async(&schema)?;
        non_empty(&r.sources, "sources")?;
        non_empty(&r.targets, "targets")?;
        require_node_cap(&schema, self.distinct_nodes(&r.sources, &r.targets))?;
        let tasks = self.mesh(&r.sources, &r.targets, r.size_bytes)?;
        non_empty(&tasks, "source/target pairs")?;
        let p = self.submit(&session, MeasurementKind::Traceroute, Post::None, tasks).await?;
        Ok(Self::started(&p))
    }

    fn mesh(&self, sources: &[String], targets: &[String], size_bytes: u32) -> Result<Vec<(AtomicTask, String)>> {
        let mut tasks = Vec::new();
        for s in sources {
            let src = self.registry.lookup(s)?.address;
            for t in targets {
                if self.registry.resolve_target(t) != src {
                    tasks.push(self.traceroute_task(s, t, size_bytes)?);
                }
            }
        }
        Ok(tasks)
    }

    fn distinct_nodes(&self, a: &[String], b: &[String]) -> usize {
        a.iter()
            .chain(b)
            .map(|n| self.registry.resolve_target(n))
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub async fn topology(self: &Arc<Self>, r: &TopologyRequest) -> Result<ProcessStarted> {
        let (session, schema) = self.admit(&r.session_id)?;
        require_async(&schema)?;
        let distinct: BTreeSet<String> = r.node_list.iter().map(|n| self.registry.resolve_target(n)).collect();
        if distinct.len() < 2 || distinct.len() != r.node_list.len() {
            return Err(Error::param("topology needs at least two distinct nodes"));
        }
        require_node_cap(&schema, distinct.len())?;
        let tasks = self.mesh(&r.node_list, &r.node_list, DEFAULT_TRACEROUTE_BYTES)?;
        let p = self.submit(&session, MeasurementKind::Topology, Post::Topology, tasks).await?;
        Ok(Self::started(&p))
    }

    fn chirp_process(&self, r: &ChirpRequest) -> Result<(Post, Vec<(AtomicTask, String)>)> {
        let params = |_: &AgentView, d: &AgentView| ChirpParams {
            destination: d.address.clone(),
            n_packets: r.n_packets,
            size_bytes: r.size_bytes,
            initial_gap_us: r.initial_gap_us,
            gap_ratio: r.gap_ratio,
            seed: 0,
        };
        let tasks = self.chirp_tasks(&r.src_node, &r.dst_node, params)?;
        let post = Post::Chirp {
            capture: tasks[0].0.task_id.clone(),
            send: tasks[1].0.task_id.clone(),
        };
        Ok((post, tasks))
    }

    pub async fn short_chirp(self: &Arc<Self>, r: &ChirpRequest) -> Result<ChirpResponse> {
        let (session, _) = self.admit(&r.session_id)?;
        let (post, tasks) = self.chirp_process(r)?;
        let p = self.submit(&session, MeasurementKind::Chirp, post, tasks).await?;
        self.run_sync(&p).await?;
        let processed = p.lock().processed.clone().unwrap_or_default();
        Ok(ChirpResponse {
            process_id: p.id.clone(),
            records: from_rows(&processed)?,
        })
    }

    pub async fn long_chirp(self: &Arc<Self>, r: &ChirpRequest) -> Result<ProcessStarted> {
        let (session, schema) = self.admit(&r.session_id)?;
        require_async(&schema)?;
        let (post, tasks) = self.chirp_process(r)?;
        let p = self.submit(&session, MeasurementKind::Chirp, post, tasks).await?;
        Ok(Self::started(&p))
    }

    fn train_process(&self, r: &TrainRequest) -> Result<(Post, Vec<(AtomicTask, String)>)> {
        let tasks = self.train_tasks(r)?;
        let (send, recv) = tasks.split_last().expect("sender is last");
        let post = Post::Train {
            send: send.0.task_id.clone(),
            recv: recv.iter().map(|(t, _)| t.task_id.clone()).collect(),
        };
        Ok((post, tasks))
    }

    pub async fn short_train(self: &Arc<Self>, r: &TrainRequest) -> Result<TrainResponse> {
        let (session, _) = self.admit(&r.session_id)?;
        let (post, tasks) = self.train_process(r)?;
        let p = self.submit(&session, MeasurementKind::Train, post, tasks).await?;
        self.run_sync(&p).await?;
        let processed = p.lock().processed.clone().unwrap_or_default();
        Ok(TrainResponse {
            process_id: p.id.clone(),
            records: from_rows(&processed)?,
        })
    }

    pub async fn long_train(self: &Arc<Self>, r: &TrainRequest) -> Result<ProcessStarted> {
        let (session, schema) = self.admit(&r.session_id)?;
        require_async(&schema)?;
        let (post, tasks) = self.train_process(r)?;
        let p = self.submit(&session, MeasurementKind::Train, post, tasks).await?;
        Ok(Self::started(&p))
    }

    pub async fn available_bandwidth(self: &Arc<Self>, r: &BandwidthRequest) -> Result<BandwidthResponse> {
        let (session, _) = self.admit(&r.session_id)?;
        let tasks = self.chirp_tasks(&r.src_node, &r.dst_node, |s, d| {
            default_sweep(d.address.clone(), s.line_rate_mbps, 0)
        })?;
        let addr = |t: &AtomicTask| self.registry.lookup(&t.agent).map(|a| a.address);
        let post = Post::Bandwidth {
            capture: tasks[0].0.task_id.clone(),
            send: tasks[1].0.task_id.clone(),
            source: addr(&tasks[1].0)?,
            destination: addr(&tasks[0].0)?,
        };
        let p = self.submit(&session, MeasurementKind::Bandwidth, post, tasks).await?;
        self.run_sync(&p).await?;
        let processed = p.lock().processed.clone().unwrap_or_default();
        let row: Vec<BandwidthRow> = from_rows(&processed)?;
        Ok(BandwidthResponse {
            bandwidth_mbps: row[0].bandwidth_mbps,
            process_id_of_raw_data: p.id.clone(),
        })
    }

    pub fn process_info(self: &Arc<Self>, r: &ProcessRequest) -> Result<ProcessInfo> {
        self.admit(&r.session_id)?;
        let p = self.lookup_process(&r.session_id, &r.process_id)?;
        self.poll_overdue(&p);
        Ok(p.info())
    }

    pub async fn kill_process(&self, r: &ProcessRequest) -> Result<Ack> {
        self.admit(&r.session_id)?;
        let p = self.lookup_process(&r.session_id, &r.process_id)?;
        self.kill(&p).await;
        Ok(Ack::YES)
    }

    /// Formatted rows of a terminal process. PROCESSED rows take precedence
    /// unless `raw` is set; RAW rows carry their `taskId`.
    pub fn get_results(&self, r: &GetResultsRequest) -> Result<ResultsResponse> {
        let (session, _) = self.admit(&r.session_id)?;
        let p = self.lookup_process(&r.session_id, &r.process_id)?;
        let (state, partial) = {
            let inner = p.lock();
            (inner.state, inner.partial || inner.state != LifecycleState::Finished)
        };
        if !state.is_terminal() {
            return Err(Error::new(ErrorCode::NotReady, format!("process is {state:?}")));
        }
        let processed = if r.raw {
            None
        } else {
            self.vo
                .retrieve(&p.session, &p.id, Layer::Processed)
                .into_iter()
                .find(|g| g.task_id.is_none())
                .map(|g| g.rows)
        };
        let rows = processed.unwrap_or_else(|| flatten_groups(&self.vo.retrieve(&p.session, &p.id, Layer::Raw)));
        let format = match &r.format {
            Some(f) => f.parse()?,
            None => session.format_results,
        };
        let zipped = r.zip.unwrap_or(session.zip_results);
        let bytes = format_output(&rows, format, zipped)?;
        Ok(ResultsResponse {
            process_id: p.id.clone(),
            state,
            partial,
            format,
            zipped,
            row_count: rows.len(),
            payload: encode_payload(&bytes),
        })
    }

    // ---- admin --------------------------------------------------------------

    pub fn vo_retrieve(&self, r: &VoRetrieveRequest) -> VoRetrieveResponse {
        VoRetrieveResponse {
            groups: self.vo.retrieve(&r.session_id, &r.process_id, r.layer),
        }
    }

    pub fn vo_export(&self, r: &VoExportRequest) -> Result<VoExportResponse> {
        let fmt: OutputFormat = r.format.parse()?;
        let files = self.vo.export(&r.dir, fmt, r.zip)?;
        Ok(VoExportResponse {
            files: files.iter().map(|p| p.display().to_string()).collect(),
        })
    }
}
