//! Shared startup for the `agent` and `mld` launchers.

use std::future::Future;
use std::io::Write;
use std::net::SocketAddr;

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("SONOMA_LOG").unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

/// Announces the bound address on stdout (first line, flushed) so parent
/// processes can find a port picked by the OS.
pub fn announce(addr: SocketAddr) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "listening on {addr}");
    let _ = out.flush();
}

/// Runs until SIGINT or SIGTERM, then awaits `shutdown`.
pub async fn until_signal<F: Future<Output = ()>>(shutdown: impl FnOnce() -> F) {
    let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
    shutdown().await;
}
