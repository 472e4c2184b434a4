use std::path::PathBuf;
use std::process::ExitCode;

use chainflow_core::engine::Design;
use chainflow_node::{load_config, start};
use clap::Parser;

/// Runs one workflow node: blockchain, workflow engine, peer transport and
/// HTTP API.
#[derive(Parser)]
#[command(name = "node")]
struct Cli {
    /// Node configuration (canonical JSON).
    #[arg(long)]
    config: PathBuf,
    /// Enable mining regardless of the config.
    #[arg(long)]
    mine: bool,
    /// Proof-of-work difficulty in leading zero bits.
    #[arg(long)]
    difficulty: Option<u32>,
    /// Confirmation depth K.
    #[arg(long)]
    depth: Option<u64>,
    /// Engine design: `actions` records transition firings, `states` records case states
    #[arg(long)]
    design: Option<Design>,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = Cli::parse();
    let mut config = match load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("node: {e}");
            return ExitCode::from(2);
        }
    };
    config.mining.enabled |= cli.mine;
    if let Some(d) = cli.difficulty {
        config.mining.difficulty = d;
    }
    if let Some(k) = cli.depth {
        config.confirmation_depth = k;
    }
    if let Some(d) = cli.design {
        config.design = d;
    }
    let daemon = match start(config).await {
        Ok(d) => d,
        Err(e) => {
            eprintln!("node: {e}");
            return ExitCode::from(2);
        }
    };
    tokio::select! {
        r = daemon.wait() => match r {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("node: {e}");
                ExitCode::FAILURE
            }
        },
        _ = tokio::signal::ctrl_c() => ExitCode::SUCCESS,
    }
}
