use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use fleetswap::harness::{
    bench_replace_vs_redeploy, race_trials, run_scenario, BenchOptions, BinPaths, Fleet, FleetOptions, RaceOptions,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fleet-harness", about = "Runs scenarios and benchmarks against a local fleet")]
struct Args {
    /// Directory holding fleet-bridge, fleet-client and fleet-sandbox.
    #[arg(long)]
    bin_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play a scenario file.
    Scenario { file: PathBuf },
    /// Time code replacement against a stop/copy/restart redeployment.
    Bench {
        #[arg(long, default_value_t = 3)]
        clients: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 1 << 20)]
        payload_bytes: usize,
    },
    /// Randomized deploy-during-assignment trials.
    Race {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        min_clients: usize,
        #[arg(long, default_value_t = 9)]
        max_clients: usize,
    },
}

fn emit<T: Serialize>(report: &T, passed: bool) -> ExitCode {
    match serde_json::to_string_pretty(report) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

async fn run(args: Args) -> anyhow::Result<ExitCode> {
    let bins = match args.bin_dir {
        Some(dir) => BinPaths::in_dir(&dir),
        None => BinPaths::locate()?,
    };
    Ok(match args.command {
        Command::Scenario { file } => {
            let report = run_scenario(bins, &file).await?;
            emit(&report, report.passed)
        }
        Command::Bench {
            clients,
            runs,
            payload_bytes,
        } => {
            let opts = BenchOptions {
                clients,
                runs,
                payload_bytes,
            };
            let report = bench_replace_vs_redeploy(bins, &opts).await?;
            let passed = report.ratio >= 10.0;
            emit(&report, passed)
        }
        Command::Race {
            trials,
            seed,
            min_clients,
            max_clients,
        } => {
            let fleet_opts = FleetOptions {
                clients: max_clients,
                ..FleetOptions::default()
            };
            let mut fleet = Fleet::start(bins, fleet_opts, None).await?;
            let opts = RaceOptions {
                trials,
                seed,
                min_clients,
                max_clients,
                ..RaceOptions::default()
            };
            let report = race_trials(&fleet, &opts).await;
            fleet.stop_all();
            let report = report?;
            let passed = report.violations.is_empty();
            emit(&report, passed)
        }
    })
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    match tokio::time::timeout(Duration::from_secs(3600), run(args)).await {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(_) => {
            eprintln!("error: harness run exceeded one hour");
            ExitCode::from(2)
        }
    }
}
