use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use fleetswap::bridge::{serve, BridgeConfig};
use fleetswap::cli::parse_duration;
use fleetswap::codeswap::Sandbox;
use fleetswap::net::{exit_on_stdin_eof, ProcessInfo};

#[derive(Parser)]
#[command(name = "fleet-bridge", about = "Central server of the fleet")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: SocketAddr,
    /// Off-board code store directory (in memory if omitted).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Audit log file (JSON lines).
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long, default_value_t = 1000.0)]
    time_scale: f64,
    /// Extra time granted to clients beyond the nominal task duration.
    #[arg(long, default_value = "30s", value_parser = parse_duration)]
    client_grace: Duration,
    /// Timeout for off-board custom code.
    #[arg(long, default_value = "10s", value_parser = parse_duration)]
    timeout: Duration,
    #[arg(long, default_value = "15s", value_parser = parse_duration)]
    deploy_timeout: Duration,
    #[arg(long, default_value_t = 0)]
    selection_seed: u64,
    /// Path of the fleet-sandbox executable (found next to this one by default).
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
        Some(p) => Some(Sandbox::new(p)),
        None => Sandbox::locate().ok(),
    };
    if sandbox.is_none() {
        log::warn!("fleet-sandbox not found; off-board custom code will fail");
    }
    serve(BridgeConfig {
        listen: args.listen,
        store_dir: args.store,
        audit_path: args.audit,
        time_scale: args.time_scale,
        client_grace: args.client_grace,
        exec_timeout: args.timeout,
        deploy_timeout: args.deploy_timeout,
        sandbox,
        selection_seed: args.selection_seed,
    })
    .await
}
