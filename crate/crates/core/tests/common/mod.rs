#![allow(dead_code)]

pub mod md5_reference;
pub mod wire_gen;

use std::path::{Path, PathBuf};

use fleetswap::harness::BinPaths;

/// Directory of the node executables built for this test run.
pub fn bin_dir() -> PathBuf {
    Path::new(env!("CARGO_BIN_EXE_fleet-bridge"))
        .parent()
        .expect("executable directory")
        .to_owned()
}

pub fn bins() -> BinPaths {
    BinPaths::in_dir(&bin_dir())
}

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}
