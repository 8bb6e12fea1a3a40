//! Measurement agent: serves the instructor interface over HTTP, runs atomic
//! tasks on a simulated or socket backend, and signals completion to the
//! management layer.

pub mod backend;
pub mod callback;
pub mod config;
pub mod duration;
pub mod server;
pub mod state;

pub use config::{AgentConfig, BackendKind};
pub use server::{serve, start, AgentServer};
pub use state::Agent;
