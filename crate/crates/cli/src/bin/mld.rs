use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sonoma_cli::daemon;
use sonoma_management::MlConfig;

/// Management layer daemon.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// JSON management configuration.
    #[arg(long)]
    config: PathBuf,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    daemon::init_logging();
    let server = match MlConfig::load(&args.config) {
        Ok(cfg) => sonoma_management::start(cfg).await,
        Err(e) => Err(e),
    };
    let server = match server {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mld: {e}");
            return ExitCode::from(sonoma_cli::exit_code(&e) as u8);
        }
    };
    daemon::announce(server.addr);
    daemon::until_signal(|| server.shutdown()).await;
    ExitCode::SUCCESS
}
