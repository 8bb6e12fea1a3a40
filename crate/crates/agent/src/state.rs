//! Task table, reservation and execution log.
//!
//! All three live behind one mutex that is never held across an await, so
//! every state change is a single serialized critical section. Workers touch
//! shared state only through [`TaskSink`] and [`Agent::finish`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use sonoma_core::api::{Ack, CapabilitiesResponse, ExecutionEntry, ExecutionLog, StartTaskResponse, TaskData};
use sonoma_core::model::{AtomicTask, LifecycleState, NodeStatus, ResourceMode, Row, TaskId, PROTOCOL_VERSION};
use sonoma_core::{Error, ErrorCode, Result};
use tokio::sync::Semaphore;
use tokio_util::sync::CancellationToken;

use crate::backend::{Backend, Job};
use crate::callback::Notifier;
use crate::config::AgentConfig;
use crate::duration::expected_duration_sec;

#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    pub holder: TaskId,
    /// Monotonic µs since agent start.
    pub held_since_us: u64,
    pub lease_sec: f64,
}

struct TaskEntry {
    task: AtomicTask,
    rows: Vec<Row>,
    cancel: CancellationToken,
    log_index: Option<usize>,
    expected_sec: f64,
}

#[derive(Default)]
struct Inner {
    tasks: HashMap<TaskId, TaskEntry>,
    reservation: Option<Reservation>,
    log: Vec<ExecutionEntry>,
}

pub struct Agent {
    config: AgentConfig,
    backend: Backend,
    inner: Mutex<Inner>,
    epoch: Instant,
    sharing: Arc<Semaphore>,
    notifier: Notifier,
}

/// Where a running task deposits its rows.
pub struct TaskSink {
    agent: Arc<Agent>,
    id: TaskId,
}

impl TaskSink {
    /// Appends a row while the task is RUNNING; false once it is not.
    pub fn push(&self, row: Row) -> bool {
        let mut inner = self.agent.lock();
        match inner.tasks.get_mut(&self.id) {
            Some(e) if e.task.state == LifecycleState::Running => {
                e.rows.push(row);
                true
            }
            _ => false,
        }
    }
}

impl Agent {
    pub fn new(config: AgentConfig, backend: Backend) -> Result<Arc<Self>> {
        config.validate()?;
        let notifier = Notifier::new(config.ml_callback_url.clone(), config.callback_backoff_ms.clone());
        Ok(Arc::new(Self {
            sharing: Arc::new(Semaphore::new(config.max_concurrent_time_sharing)),
            config,
            backend,
            inner: Mutex::default(),
            epoch: Instant::now(),
            notifier,
        }))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }

    pub fn capabilities(&self) -> CapabilitiesResponse {
        CapabilitiesResponse {
            node_id: self.config.node_id.clone(),
            address: self.backend.address().to_owned(),
            capabilities: self.config.capabilities.clone(),
            status: self.status(),
            protocol_version: PROTOCOL_VERSION.to_owned(),
            line_rate_mbps: self.backend.line_rate_mbps(),
        }
    }

    /// BUSY exactly while a reservation is held.
    pub fn status(&self) -> NodeStatus {
        if self.lock().reservation.is_some() {
            NodeStatus::Busy
        } else {
            NodeStatus::Free
        }
    }

    pub fn reservation(&self) -> Option<Reservation> {
        self.lock().reservation.clone()
    }

    pub fn execution_log(&self) -> ExecutionLog {
        ExecutionLog {
            entries: self.lock().log.clone(),
        }
    }

    pub fn task_state(&self, id: &TaskId) -> Option<LifecycleState> {
        self.lock().tasks.get(id).map(|e| e.task.state)
    }

    pub fn start_task(self: &Arc<Self>, mut task: AtomicTask) -> Result<StartTaskResponse> {
        let cap = task.kind().required_capability();
        if !self.config.capabilities.contains(&cap) {
            return Err(Error::new(
                ErrorCode::CapabilityMissing,
                format!("{} cannot run {:?} tasks", self.config.node_id, task.kind()),
            ));
        }
        task.validate_mode()?;
        let expected_sec = expected_duration_sec(&task.spec, self.backend.sender_line_rate_mbps(&task.spec));
        let job = self.backend.prepare(&task.spec)?;
        let id = task.task_id.clone();
        let response = |accepted, reason| StartTaskResponse {
            task_id: id.clone(),
            accepted,
            expected_duration_sec: expected_sec,
            reason,
        };
        let cancel = CancellationToken::new();
        let mode = task.resource_mode;
        {
            let mut inner = self.lock();
            if inner.tasks.contains_key(&id) {
                // retried submission
                return Ok(response(true, None));
            }
            task.state = LifecycleState::Scheduled;
            let mut log_index = None;
            if mode == ResourceMode::TimeReserving {
                if inner.reservation.is_some() {
                    return Ok(response(false, Some(ErrorCode::Busy)));
                }
                let now = self.now_us();
                inner.reservation = Some(Reservation {
                    holder: id.clone(),
                    held_since_us: now,
                    lease_sec: self.lease_sec(expected_sec),
                });
                task.state = LifecycleState::Running;
                log_index = Some(push_log(&mut inner.log, &task, now));
            }
            inner.tasks.insert(
                id.clone(),
                TaskEntry {
                    task,
                    rows: Vec::new(),
                    cancel: cancel.clone(),
                    log_index,
                    expected_sec,
                },
            );
        }
        let accepted = response(true, None);
        let agent = self.clone();
        tokio::spawn(async move { agent.work(id, mode, job, cancel, expected_sec).await });
        Ok(accepted)
    }

    fn lease_sec(&self, expected_sec: f64) -> f64 {
        2.0 * expected_sec * self.config.sim_time_scale.max(1.0)
    }

    async fn work(self: Arc<Self>, id: TaskId, mode: ResourceMode, job: Job, cancel: CancellationToken, expected_sec: f64) {
        let sink = TaskSink {
            agent: self.clone(),
            id: id.clone(),
        };
        let scale = self.config.sim_time_scale;
        match mode {
            ResourceMode::TimeReserving => {
                let lease = Duration::from_secs_f64(self.lease_sec(expected_sec));
                let outcome = tokio::select! {
                    r = self.backend.run(job, sink, cancel.clone(), scale) => r,
                    _ = tokio::time::sleep(lease) => {
                        cancel.cancel();
                        Err(Error::new(ErrorCode::Timeout, "reservation lease expired"))
                    }
                };
                self.finish(&id, outcome);
            }
            ResourceMode::TimeSharing => {
                let permit = tokio::select! {
                    _ = cancel.cancelled() => return,
                    p = self.sharing.clone().acquire_owned() => p.expect("semaphore is never closed"),
                };
                {
                    let mut inner = self.lock();
                    let now = self.now_us();
                    let Inner { tasks, log, .. } = &mut *inner;
                    let Some(e) = tasks.get_mut(&id) else { return };
                    if e.task.state != LifecycleState::Scheduled {
                        return;
                    }
                    e.task.state = LifecycleState::Running;
                    e.log_index = Some(push_log(log, &e.task, now));
                }
                let outcome = self.backend.run(job, sink, cancel, scale).await;
                self.finish(&id, outcome);
                drop(permit);
            }
        }
    }

    /// Moves a RUNNING task to FINISHED or FAILED and notifies the ML.
    /// Tasks already KILLED stay as they are.
    fn finish(&self, id: &TaskId, outcome: Result<()>) {
        let next = match &outcome {
            Ok(()) => LifecycleState::Finished,
            Err(e) => {
                tracing::warn!(task = %id.as_str(), "task failed: {e}");
                LifecycleState::Failed
            }
        };
        if self.terminate(id, next) {
            self.notifier.notify(id.clone());
        }
    }

    /// Terminal transition inside the critical section: releases the
    /// reservation and closes the log entry. False if already terminal.
    fn terminate(&self, id: &TaskId, next: LifecycleState) -> bool {
        let mut inner = self.lock();
        let now = self.now_us();
        let Inner { tasks, reservation, log } = &mut *inner;
        let Some(e) = tasks.get_mut(id) else { return false };
        if e.task.state.is_terminal() || e.task.state.transition(next).is_err() {
            return false;
        }
        if reservation.as_ref().is_some_and(|r| &r.holder == id) {
            *reservation = None;
        }
        if let Some(i) = e.log_index {
            log[i].ended_us = Some(now);
            log[i].final_state = Some(next);
        }
        e.cancel.cancel();
        true
    }

    pub fn abort_task(&self, id: &TaskId) -> Result<Ack> {
        if !self.lock().tasks.contains_key(id) {
            return Err(unknown(id));
        }
        self.terminate(id, LifecycleState::Killed);
        Ok(Ack::YES)
    }

    pub fn fetch_task_data(&self, id: &TaskId) -> Result<TaskData> {
        let inner = self.lock();
        let e = inner.tasks.get(id).ok_or_else(|| unknown(id))?;
        if !e.task.state.is_terminal() {
            return Err(Error::new(
                ErrorCode::NotReady,
                format!("task {} is {:?}", id.as_str(), e.task.state),
            ));
        }
        Ok(TaskData {
            task_id: id.clone(),
            state: e.task.state,
            raw_rows: e.rows.clone(),
        })
    }

    /// Expected duration reported when the task was accepted.
    pub fn expected_duration_sec(&self, id: &TaskId) -> Option<f64> {
        self.lock().tasks.get(id).map(|e| e.expected_sec)
    }
}

fn push_log(log: &mut Vec<ExecutionEntry>, task: &AtomicTask, now: u64) -> usize {
    log.push(ExecutionEntry {
        task_id: task.task_id.clone(),
        kind: task.kind(),
        resource_mode: task.resource_mode,
        started_us: now,
        ended_us: None,
        final_state: None,
    });
    log.len() - 1
}

fn unknown(id: &TaskId) -> Error {
    Error::new(ErrorCode::UnknownTask, format!("no task {}", id.as_str()))
}
