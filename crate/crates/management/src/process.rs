//! Process bookkeeping. One mutex per process; nothing here awaits.

use std::time::Instant;

use sonoma_core::api::ProcessInfo;
use sonoma_core::model::{AtomicTask, LifecycleState, MeasurementKind, ProcessId, Row, SessionId, TaskId};
use sonoma_core::Error;
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    /// Not yet sent to its agent.
    Pending,
    /// Sent; waiting for a callback or a poll.
    InFlight,
    /// One caller is pulling the data; everyone else backs off.
    Fetching,
    Done,
}

#[derive(Debug, Clone)]
pub struct Slot {
    pub task: AtomicTask,
    pub url: String,
    pub expected_sec: f64,
    pub dispatched_at: Option<Instant>,
    pub status: SlotStatus,
    pub final_state: Option<LifecycleState>,
    pub rows: Vec<Row>,
}

/// Post-processing run once every task has landed.
#[derive(Debug, Clone, PartialEq)]
pub enum Post {
    None,
    Topology,
    Chirp { send: TaskId, capture: TaskId },
    Train { send: TaskId, recv: Vec<TaskId> },
    Bandwidth { send: TaskId, capture: TaskId, source: String, destination: String },
}

#[derive(Debug)]
pub struct ProcessInner {
    pub state: LifecycleState,
    pub slots: Vec<Slot>,
    pub expected_duration_sec: f64,
    pub partial: bool,
    /// Set while finalization or a kill is under way.
    pub settling: bool,
    pub processed: Option<Vec<Row>>,
    pub error: Option<Error>,
}

impl ProcessInner {
    pub fn completed(&self) -> usize {
        self.slots.iter().filter(|s| s.status == SlotStatus::Done).count()
    }

    pub fn slot_mut(&mut self, id: &TaskId) -> Option<&mut Slot> {
        self.slots.iter_mut().find(|s| &s.task.task_id == id)
    }

    pub fn slot(&self, id: &TaskId) -> Option<&Slot> {
        self.slots.iter().find(|s| &s.task.task_id == id)
    }
}

pub struct Process {
    pub id: ProcessId,
    pub session: SessionId,
    pub kind: MeasurementKind,
    pub post: Post,
    pub inner: std::sync::Mutex<ProcessInner>,
    state_tx: watch::Sender<LifecycleState>,
}

impl Process {
    pub fn new(session: SessionId, kind: MeasurementKind, post: Post, tasks: Vec<(AtomicTask, String)>) -> Self {
        let (state_tx, _) = watch::channel(LifecycleState::Scheduled);
        Self {
            id: ProcessId::generate(),
            session,
            kind,
            post,
            inner: std::sync::Mutex::new(ProcessInner {
                state: LifecycleState::Scheduled,
                slots: tasks
                    .into_iter()
                    .map(|(task, url)| Slot {
                        task,
                        url,
                        expected_sec: 0.0,
                        dispatched_at: None,
                        status: SlotStatus::Pending,
                        final_state: None,
                        rows: Vec::new(),
                    })
                    .collect(),
                expected_duration_sec: 0.0,
                partial: false,
                settling: false,
                processed: None,
                error: None,
            }),
            state_tx,
        }
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, ProcessInner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> watch::Receiver<LifecycleState> {
        self.state_tx.subscribe()
    }

    /// Moves to `next` (via RUNNING when still SCHEDULED) and wakes waiters.
    pub fn set_state(&self, inner: &mut ProcessInner, next: LifecycleState) {
        if inner.state == LifecycleState::Scheduled && next != LifecycleState::Killed && next != LifecycleState::Running {
            inner.state = LifecycleState::Running;
        }
        if inner.state.transition(next).is_ok() {
            self.state_tx.send_replace(next);
        }
    }

    pub fn info(&self) -> ProcessInfo {
        let inner = self.lock();
        ProcessInfo {
            process_id: self.id.clone(),
            kind: self.kind,
            state: inner.state,
            completed_tasks: inner.completed(),
            total_tasks: inner.slots.len(),
            expected_duration_sec: inner.expected_duration_sec,
        }
    }
}

/// Single task: the agent's own estimate. Composite: the busiest agent's
/// total plus a margin.
pub fn composite_expected_sec(slots: &[Slot]) -> f64 {
    if let [only] = slots {
        return only.expected_sec;
    }
    let mut per_agent: std::collections::BTreeMap<&str, f64> = Default::default();
    for s in slots {
        *per_agent.entry(s.task.agent.as_str()).or_default() += s.expected_sec;
    }
    per_agent.values().copied().fold(0.0, f64::max) + 5.0
}
