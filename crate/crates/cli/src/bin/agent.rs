use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sonoma_agent::AgentConfig;
use sonoma_cli::daemon;

/// Measurement agent daemon.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// JSON agent configuration.
    #[arg(long)]
    config: PathBuf,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    daemon::init_logging();
    let server = match AgentConfig::load(&args.config) {
        Ok(cfg) => sonoma_agent::start(cfg).await,
        Err(e) => Err(e),
    };
    let server = match server {
        Ok(s) => s,
        Err(e) => {
            eprintln!("agent: {e}");
            return ExitCode::from(sonoma_cli::exit_code(&e) as u8);
        }
    };
    daemon::announce(server.addr);
    daemon::until_signal(|| server.shutdown()).await;
    ExitCode::SUCCESS
}
