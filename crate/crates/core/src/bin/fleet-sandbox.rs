//! Child process that runs one custom-code call; see `codeswap::Sandbox`.

fn main() {
    std::process::exit(fleetswap::codeswap::sandbox_main());
}
