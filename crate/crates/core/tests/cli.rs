mod common;

use std::path::Path;
use std::process::{Command, Output};

use fleetswap::cli::{EXIT_IO, EXIT_OK, EXIT_REJECTED};
use fleetswap::harness::{Fleet, FleetOptions};

fn fleet_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleet"))
        .args(args)
        .output()
        .expect("run fleet")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SPEC: &str = r#"{
  "name": "cli-mean",
  "user_id": "u1",
  "clients": "all",
  "onboard": {"computation": "mean", "signals": ["speed"], "frequency": 10, "samples": 20},
  "offboard": {"computation": "average", "iterations": 2}
}"#;

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", SPEC);
    let bad = write(dir.path(), "bad.json", &SPEC.replace("\"frequency\": 10", "\"frequency\": 0"));
    let broken = write(dir.path(), "broken.json", "{\"name\": ");

    let out = fleet_cmd(&["validate", &good]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{out:?}");
    let out = fleet_cmd(&["validate", &bad]);
    assert_eq!(out.status.code(), Some(EXIT_REJECTED));
    assert!(String::from_utf8_lossy(&out.stdout).contains("frequency"));
    let out = fleet_cmd(&["validate", &broken]);
    assert_ne!(out.status.code(), Some(EXIT_OK));
    let out = fleet_cmd(&["validate", "/nonexistent/spec.json"]);
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn unreachable_bridge_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let code = write(dir.path(), "m.rhai", "fn custom_code(x) { x }");
    let out = fleet_cmd(&["--bridge", "127.0.0.1:1", "--user", "u1", "deploy", "onboard", &code]);
    assert_eq!(out.status.code(), Some(EXIT_IO), "{out:?}");
    let out = fleet_cmd(&["--bridge", "127.0.0.1:1", "--user", "u1", "nodes"]);
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn bad_module_is_rejected_before_leaving_the_machine() {
    let dir = tempfile::tempdir().unwrap();
    let code = write(dir.path(), "m.rhai", "fn custom_code(x, y) { x }");
    // Local validation fails first, so the unreachable bridge is never tried.
    let out = fleet_cmd(&["--bridge", "127.0.0.1:1", "--user", "u1", "deploy", "onboard", &code]);
    assert_eq!(out.status.code(), Some(EXIT_REJECTED), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("entry_point"));
}

#[tokio::test(flavor = "multi_thread")]
async fn deploy_submit_watch_results_against_a_live_fleet() {
    let mut fleet = Fleet::start(common::bins(), FleetOptions::default(), None).await.unwrap();
    let bridge = fleet.bridge_addr().to_string();
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "cfg.json", &format!("{{\"user\": \"u1\", \"bridge\": \"{bridge}\"}}"));
    let code = write(dir.path(), "m.rhai", "fn custom_code(x) { x.len() }");
    let spec = write(dir.path(), "spec.json", SPEC);
    let results = dir.path().join("out.jsonl");

    let run = |args: Vec<String>| async move {
        tokio::task::spawn_blocking(move || {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            fleet_cmd(&args)
        })
        .await
        .unwrap()
    };
    let s = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let out = run(s(&["--config", &config, "nodes"])).await;
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("model").count(), 3);

    let out = run(s(&["--config", &config, "deploy", "onboard", &code])).await;
    assert_eq!(out.status.code(), Some(EXIT_OK), "{out:?}");

    let out = run(s(&["--config", &config, "submit", &spec])).await;
    assert_eq!(out.status.code(), Some(EXIT_OK), "{out:?}");
    let id = String::from_utf8_lossy(&out.stdout).lines().next().unwrap().trim().to_owned();
    assert_eq!(id, "u1-1");

    let out = run(s(&["--config", &config, "watch", &id])).await;
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(text.lines().last().unwrap().contains("finished"));

    let out = run(s(&["--config", &config, "results", &id, &results.to_string_lossy()])).await;
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 2);

    // Another user's assignment id is not visible.
    let out = run(s(&["--config", &config, "--user", "u2", "watch", &id])).await;
    assert_eq!(out.status.code(), Some(EXIT_REJECTED), "{out:?}");
    fleet.stop_all();
}
