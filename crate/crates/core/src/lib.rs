//! Core of the sonoma measurement framework: the shared vocabulary, the
//! deterministic network simulator, the chirp estimator, topology merging,
//! and the append-only result repository with its output formats.

pub mod api;
pub mod error;
pub mod estimator;
pub mod model;
pub mod rows;
pub mod simnet;
pub mod topology;
pub mod vo;

pub use error::{Error, ErrorCode, Result};
