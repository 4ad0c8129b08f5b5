use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use fleetswap::cli::parse_duration;
use fleetswap::client::{run_client, ClientConfig};
use fleetswap::codeswap::Sandbox;
use fleetswap::net::{exit_on_stdin_eof, ProcessInfo};
use fleetswap::sensors::Catalog;

#[derive(Parser)]
#[command(name = "fleet-client", about = "Simulated vehicle node")]
struct Args {
    #[arg(long)]
    client_id: String,
    #[arg(long, default_value = "type_a")]
    model: String,
    #[arg(long, default_value = "127.0.0.1:7878")]
    bridge: SocketAddr,
    /// Sensor seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timeout for on-board custom code.
    #[arg(long, default_value = "10s", value_parser = parse_duration)]
    timeout: Duration,
    #[arg(long, default_value_t = 1000.0)]
    time_scale: f64,
    /// Code store directory.
    #[arg(long)]
    store: PathBuf,
    /// Signal catalog (JSON); built-in signals if omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Wall-clock cap for collecting one task's samples.
    #[arg(long, value_parser = parse_duration)]
    collect_cap: Option<Duration>,
    #[arg(long)]
    sandbox: Option<PathBuf>,
    /// Exit when stdin is closed.
    #[arg(long)]
    stdin_shutdown: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    ProcessInfo::current();
    env_logger::init();
    let args = Args::parse();
    if args.stdin_shutdown {
        exit_on_stdin_eof();
    }
    let sandbox = match args.sandbox {
        Some(p) => Sandbox::new(p),
        None => Sandbox::locate().context("locating fleet-sandbox")?,
    };
    let mut config = ClientConfig::new(&args.client_id, &args.model, args.bridge, args.store, sandbox);
    config.seed = args.seed;
    config.exec_timeout = args.timeout;
    config.time_scale = args.time_scale;
    config.collect_cap = args.collect_cap;
    if let Some(p) = args.catalog {
        config.catalog = Catalog::load(&p)?;
    }
    run_client(config).await
}
