//! The management layer: sessions, quotas, scheduling of atomic tasks on
//! agents, composite post-processing and result delivery.

pub mod auth;
pub mod catalog;
pub mod client;
pub mod config;
pub mod process;
pub mod registry;
pub mod security;
pub mod server;
pub mod service;

pub use config::MlConfig;
pub use server::{start, MlServer};
pub use service::Ml;
