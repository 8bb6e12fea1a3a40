//! Task execution backends.
//!
//! `prepare` validates a task and turns it into a [`Job`] without side
//! effects, so every parameter or routing error surfaces at `startTask`.

pub mod real;
pub mod sim;

use std::time::Duration;

use sonoma_core::model::{Row, TaskSpec};
use sonoma_core::Result;
use tokio_util::sync::CancellationToken;

use crate::state::TaskSink;

pub enum Job {
    /// Rows precomputed by the simulator, each released after its offset
    /// (simulated seconds since task start).
    Playback(Vec<(f64, Row)>),
    Real(TaskSpec),
}

pub enum Backend {
    Sim(sim::SimBackend),
    Real(real::RealBackend),
}

impl Backend {
    pub fn address(&self) -> &str {
        match self {
            Backend::Sim(b) => b.address(),
            Backend::Real(b) => b.address(),
        }
    }

    pub fn line_rate_mbps(&self) -> f64 {
        match self {
            Backend::Sim(b) => b.line_rate_mbps(),
            Backend::Real(b) => b.line_rate_mbps(),
        }
    }

    /// Line rate of the node emitting the packets of `spec`.
    pub fn sender_line_rate_mbps(&self, spec: &TaskSpec) -> f64 {
        match (self, spec) {
            (Backend::Sim(b), TaskSpec::TrainRecv(p)) => b.line_rate_of(&p.source).unwrap_or(b.line_rate_mbps()),
            _ => self.line_rate_mbps(),
        }
    }

    pub fn prepare(&self, spec: &TaskSpec) -> Result<Job> {
        match self {
            Backend::Sim(b) => b.prepare(spec).map(Job::Playback),
            Backend::Real(b) => b.prepare(spec).map(|()| Job::Real(spec.clone())),
        }
    }

    pub async fn run(&self, job: Job, sink: TaskSink, cancel: CancellationToken, time_scale: f64) -> Result<()> {
        match (self, job) {
            (_, Job::Playback(events)) => {
                playback(events, &sink, &cancel, time_scale).await;
                Ok(())
            }
            (Backend::Real(b), Job::Real(spec)) => b.run(spec, &sink, &cancel).await,
            (Backend::Sim(_), Job::Real(_)) => unreachable!("the simulator only produces playback jobs"),
        }
    }
}

async fn playback(events: Vec<(f64, Row)>, sink: &TaskSink, cancel: &CancellationToken, scale: f64) {
    let start = tokio::time::Instant::now();
    for (offset, row) in events {
        let due = start + Duration::from_secs_f64((offset * scale).max(0.0));
        tokio::select! {
            _ = cancel.cancelled() => return,
            _ = tokio::time::sleep_until(due) => {}
        }
        if !sink.push(row) {
            return;
        }
    }
}
