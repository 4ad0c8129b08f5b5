use clap::Parser;
use fleetswap::cli::{main_with_args, Args};

fn main() {
    env_logger::init();
    std::process::exit(main_with_args(Args::parse()));
}
