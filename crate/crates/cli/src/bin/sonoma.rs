use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sonoma_cli::client::{Client, ClientConfig};
use sonoma_cli::commands::{self, ChirpArgs};
use sonoma_core::api::PingOptions;

/// Command-line client of the measurement management layer.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(long, env = "SONOMA_ML_URL", default_value = "http://127.0.0.1:8080", global = true)]
    ml_url: String,
    #[arg(long, env = "SONOMA_USER", default_value = "guest", global = true)]
    user: String,
    #[arg(long, env = "SONOMA_CREDENTIAL", default_value = "", global = true, hide_env_values = true)]
    credential: String,
    /// CSV or XML.
    #[arg(long, env = "SONOMA_FORMAT", default_value = "CSV", global = true)]
    format: String,
    /// Ask for gzip-compressed results.
    #[arg(long, env = "SONOMA_ZIP", global = true)]
    zip: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discover the topology between nodes; writes the edge list and routes.
    Topology {
        #[arg(required = true, num_args = 2..)]
        nodes: Vec<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Estimate the available bandwidth from SRC to DST.
    Bandwidth { src: String, dst: String },
    Ping {
        src: String,
        target: String,
        #[arg(long, default_value_t = 4)]
        count: u32,
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 1.0)]
        interval: f64,
    },
    Traceroute { src: String, target: String },
    /// Chirp from SRC to DST and print the aligned records.
    Chirp {
        src: String,
        dst: String,
        #[arg(long, default_value_t = 32)]
        packets: u32,
        #[arg(long, default_value_t = 1500)]
        size: u32,
        #[arg(long, default_value_t = 12000.0)]
        initial_gap_us: f64,
        #[arg(long, default_value_t = 0.9)]
        gap_ratio: f64,
    },
    /// Send a back-to-back train from SRC to every DST.
    Train {
        src: String,
        #[arg(required = true)]
        dsts: Vec<String>,
        #[arg(long, default_value_t = 100)]
        packets: u32,
        #[arg(long, default_value_t = 1500)]
        size: u32,
    },
    /// List live nodes, optionally by capability.
    Nodes {
        #[arg(default_value = "ALL")]
        filter: String,
    },
    /// Call any operation with a JSON object of parameters.
    Raw {
        operation: String,
        #[arg(default_value = "{}")]
        params: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = ClientConfig {
        ml_url: cli.ml_url,
        user: cli.user,
        credential: cli.credential,
        format: cli.format,
        zip: cli.zip,
    };
    let c = Client::new(&cfg.ml_url);
    let mut out = std::io::stdout().lock();
    let r = cfg.validate().and_then(|()| match cli.command {
        Command::Topology { nodes, out: path } => commands::topology(&c, &cfg, &nodes, &path, &mut out),
        Command::Bandwidth { src, dst } => commands::bandwidth(&c, &cfg, &src, &dst, &mut out),
        Command::Ping { src, target, count, size, interval } => commands::ping(
            &c,
            &cfg,
            &src,
            &target,
            PingOptions { count, size_bytes: size, interval_sec: interval },
            &mut out,
        ),
        Command::Traceroute { src, target } => commands::traceroute(&c, &cfg, &src, &target, &mut out),
        Command::Chirp { src, dst, packets, size, initial_gap_us, gap_ratio } => commands::chirp(
            &c,
            &cfg,
            &src,
            &dst,
            ChirpArgs { n_packets: packets, size_bytes: size, initial_gap_us, gap_ratio },
            &mut out,
        ),
        Command::Train { src, dsts, packets, size } => commands::train(&c, &cfg, &src, &dsts, packets, size, &mut out),
        Command::Nodes { filter } => commands::nodes(&c, &cfg, &filter, &mut out),
        Command::Raw { operation, params } => commands::raw(&c, &cfg, &operation, &params, &mut out),
    });
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sonoma: {e}");
            ExitCode::from(sonoma_cli::exit_code(&e) as u8)
        }
    }
}
