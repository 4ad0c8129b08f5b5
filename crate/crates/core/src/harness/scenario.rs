//! Scenario files: a JSON list of `{at_ms, action, args}` run in order.
//! Each action starts no earlier than `at_ms` after the scenario began.
//!
//! Actions: `start`, `module`, `deploy`, `submit`, `wait_iteration`,
//! `wait_finished`, `sleep`, `kill_client`, `restart_client`, `stop`, and the
//! assertions `assert_results`, `assert_signatures`, `assert_swap`,
//! `assert_purity`, `assert_start_times`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::{BinPaths, Fleet, FleetOptions};
use crate::audit::{read_log, signature_violations};
use crate::cli::{read_json_file, CliError, WatchEvent};
use crate::codeswap::{signature, Target};
use crate::protocol::{NodesReport, STATE_FINISHED};
use crate::spec::ClientSelector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    #[serde(default)]
    pub at_ms: u64,
    pub action: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub index: usize,
    pub action: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Events seen per submitted assignment label, in arrival order.
    pub assignments: BTreeMap<String, Vec<Value>>,
}

type Events = Arc<Mutex<Vec<WatchEvent>>>;

struct Tracked {
    id: String,
    events: Events,
    watcher: Option<JoinHandle<Result<Vec<WatchEvent>, CliError>>>,
}

impl Tracked {
    fn outcomes(&self) -> usize {
        self.events
            .lock()
            .unwrap()
            .iter()
            .filter(|e| !e.is_finished())
            .count()
    }

    /// Delivered `(iteration, signature)` pairs.
    fn signatures(&self) -> Vec<(u32, String)> {
        self.events
            .lock()
            .unwrap()
            .iter()
            .filter_map(|e| match e {
                WatchEvent::Result(r) => Some((r.iteration, r.signature.clone())),
                _ => None,
            })
            .collect()
    }
}

/// Outcome counts of every tracked assignment when a deployment started and
/// when it was acknowledged.
struct DeployMark {
    at_start: HashMap<String, usize>,
    at_ack: HashMap<String, usize>,
}

struct Runner {
    bins: BinPaths,
    base_dir: PathBuf,
    fleet: Option<Fleet>,
    initial_nodes: Option<NodesReport>,
    modules: HashMap<String, String>,
    tracked: BTreeMap<String, Tracked>,
    deploys: HashMap<String, DeployMark>,
    checks: Vec<Check>,
}

pub async fn run_scenario(bins: BinPaths, path: &Path) -> anyhow::Result<ScenarioReport> {
    let doc = read_json_file(path).map_err(|e| anyhow!("{e}"))?;
    let actions: Vec<Action> = serde_json::from_value(doc).context("scenario must be a list of {at_ms, action, args}")?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let base = path.parent().unwrap_or(Path::new(".")).to_owned();
    Ok(run_actions(bins, &name, &actions, &base).await)
}

pub async fn run_actions(bins: BinPaths, name: &str, actions: &[Action], base_dir: &Path) -> ScenarioReport {
    let mut runner = Runner {
        bins,
        base_dir: base_dir.to_owned(),
        fleet: None,
        initial_nodes: None,
        modules: HashMap::new(),
        tracked: BTreeMap::new(),
        deploys: HashMap::new(),
        checks: Vec::new(),
    };
    let started = Instant::now();
    let mut error = None;
    for (index, action) in actions.iter().enumerate() {
        tokio::time::sleep_until(started + Duration::from_millis(action.at_ms)).await;
        if let Err(e) = runner.step(index, action).await {
            error = Some(format!("action {index} ({}): {e:#}", action.action));
            break;
        }
    }
    for t in runner.tracked.values_mut() {
        if let Some(w) = t.watcher.take() {
            w.abort();
        }
    }
    if let Some(f) = runner.fleet.as_mut() {
        f.stop_all();
    }
    let assignments = runner
        .tracked
        .iter()
        .map(|(label, t)| {
            let events = t.events.lock().unwrap().iter().map(event_json).collect();
            (label.clone(), events)
        })
        .collect();
    ScenarioReport {
        name: name.to_owned(),
        passed: error.is_none() && runner.checks.iter().all(|c| c.ok),
        checks: runner.checks,
        error,
        assignments,
    }
}

fn event_json(e: &WatchEvent) -> Value {
    match e {
        WatchEvent::Result(r) => serde_json::to_value(r).unwrap_or_default(),
        WatchEvent::Status(s) => serde_json::to_value(s).unwrap_or_default(),
    }
}

fn arg_str<'a>(args: &'a Value, key: &str) -> anyhow::Result<&'a str> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| anyhow!("missing string argument {key:?}"))
}

fn arg_u64(args: &Value, key: &str, default: u64) -> u64 {
    args.get(key).and_then(Value::as_u64).unwrap_or(default)
}

impl Runner {
    fn fleet(&self) -> anyhow::Result<&Fleet> {
        self.fleet.as_ref().ok_or_else(|| anyhow!("no fleet running; add a start action"))
    }

    fn tracked(&self, args: &Value) -> anyhow::Result<&Tracked> {
        let label = arg_str(args, "label")?;
        self.tracked
            .get(label)
            .ok_or_else(|| anyhow!("no submitted assignment labelled {label:?}"))
    }

    fn check(&mut self, index: usize, action: &str, ok: bool, detail: String) {
        self.checks.push(Check {
            index,
            action: action.to_owned(),
            ok,
            detail,
        });
    }

    fn module_signature(&self, name: &str) -> anyhow::Result<String> {
        self.modules
            .get(name)
            .map(|s| signature(s))
            .ok_or_else(|| anyhow!("unknown module {name:?}"))
    }

    async fn step(&mut self, index: usize, a: &Action) -> anyhow::Result<()> {
        let args = &a.args;
        match a.action.as_str() {
            "start" => {
                let defaults = FleetOptions::default();
                let ms = |key: &str, d: Duration| Duration::from_millis(arg_u64(args, key, d.as_millis() as u64));
                let opts = FleetOptions {
                    clients: arg_u64(args, "clients", 3) as usize,
                    base_seed: arg_u64(args, "seed", defaults.base_seed),
                    time_scale: args.get("time_scale").and_then(Value::as_f64).unwrap_or(defaults.time_scale),
                    client_timeout: ms("client_timeout_ms", defaults.client_timeout),
                    bridge_timeout: ms("bridge_timeout_ms", defaults.bridge_timeout),
                    client_grace: ms("client_grace_ms", defaults.client_grace),
                    collect_cap: args.get("collect_cap_ms").and_then(Value::as_u64).map(Duration::from_millis),
                    models: match args.get("models") {
                        Some(v) => serde_json::from_value(v.clone())?,
                        None => defaults.models,
                    },
                };
                let fleet = Fleet::start(self.bins.clone(), opts, None).await?;
                self.initial_nodes = Some(fleet.nodes().await?);
                self.fleet = Some(fleet);
            }
            "module" => {
                let name = arg_str(args, "name")?.to_owned();
                let source = match (args.get("source").and_then(Value::as_str), args.get("file").and_then(Value::as_str)) {
                    (Some(s), _) => s.to_owned(),
                    (None, Some(f)) => std::fs::read_to_string(self.base_dir.join(f))?,
                    (None, None) => bail!("module needs source or file"),
                };
                self.modules.insert(name, source);
            }
            "deploy" => {
                let module = arg_str(args, "module")?.to_owned();
                let source = self
                    .modules
                    .get(&module)
                    .cloned()
                    .ok_or_else(|| anyhow!("unknown module {module:?}"))?;
                let user = args.get("user").and_then(Value::as_str).unwrap_or("u1");
                let target: Target = args
                    .get("target")
                    .and_then(Value::as_str)
                    .unwrap_or("onboard")
                    .parse()
                    .map_err(|e: String| anyhow!(e))?;
                let clients = ClientSelector::parse_cli(args.get("clients").and_then(Value::as_str).unwrap_or("all"))
                    .map_err(|e| anyhow!(e))?;
                let at_start = self.tracked.iter().map(|(l, t)| (l.clone(), t.outcomes())).collect();
                let result = self.fleet()?.analyst(user).deploy(target, &source, &clients).await;
                let at_ack = self.tracked.iter().map(|(l, t)| (l.clone(), t.outcomes())).collect();
                self.deploys.insert(module.clone(), DeployMark { at_start, at_ack });
                let state = match &result {
                    Ok(r) => r.state.clone(),
                    Err(CliError::Io(e)) => bail!("deploy failed: {e}"),
                    Err(_) => "rejected".to_owned(),
                };
                if let Some(expect) = args.get("expect").and_then(Value::as_str) {
                    let detail = match &result {
                        Ok(r) => format!("{module}: {} acked {:?} failed {:?}", r.state, r.acked, r.failed),
                        Err(e) => format!("{module}: {e}"),
                    };
                    self.check(index, &a.action, state == expect, format!("expected {expect}; {detail}"));
                } else if let Err(e) = result {
                    bail!("deploy of {module} rejected: {e}");
                }
            }
            "submit" => {
                let label = arg_str(args, "label")?.to_owned();
                let user = args.get("user").and_then(Value::as_str).unwrap_or("u1").to_owned();
                let doc = match (args.get("spec"), args.get("file").and_then(Value::as_str)) {
                    (Some(spec), _) => spec.clone(),
                    (None, Some(f)) => read_json_file(&self.base_dir.join(f)).map_err(|e| anyhow!("{e}"))?,
                    (None, None) => bail!("submit needs spec or file"),
                };
                let analyst = self.fleet()?.analyst(&user);
                let (id, _) = analyst.submit(&doc).await.map_err(|e| anyhow!("{e}"))?;
                let events: Events = Arc::default();
                let sink = events.clone();
                let watch_id = id.clone();
                let watcher = tokio::spawn(async move {
                    analyst
                        .watch(&watch_id, |e| sink.lock().unwrap().push(e.clone()))
                        .await
                });
                self.tracked.insert(
                    label,
                    Tracked {
                        id,
                        events,
                        watcher: Some(watcher),
                    },
                );
            }
            "wait_iteration" => {
                let iteration = arg_u64(args, "iteration", 0) as u32;
                let limit = Duration::from_millis(arg_u64(args, "timeout_ms", 60_000));
                let t = self.tracked(args)?;
                let deadline = Instant::now() + limit;
                loop {
                    let seen = t.events.lock().unwrap().iter().any(|e| match e {
                        WatchEvent::Result(r) => r.iteration >= iteration,
                        WatchEvent::Status(s) => s.state == STATE_FINISHED || s.iteration.is_some_and(|i| i >= iteration),
                    });
                    if seen {
                        break;
                    }
                    if Instant::now() >= deadline {
                        bail!("iteration {iteration} of {} not reached within {limit:?}", t.id);
                    }
                    tokio::time::sleep(Duration::from_millis(2)).await;
                }
            }
            "wait_finished" => {
                let limit = Duration::from_millis(arg_u64(args, "timeout_ms", 120_000));
                let label = arg_str(args, "label")?.to_owned();
                let t = self
                    .tracked
                    .get_mut(&label)
                    .ok_or_else(|| anyhow!("no submitted assignment labelled {label:?}"))?;
                if let Some(w) = t.watcher.take() {
                    tokio::time::timeout(limit, w)
                        .await
                        .map_err(|_| anyhow!("{label} did not finish within {limit:?}"))??
                        .map_err(|e| anyhow!("watch failed: {e}"))?;
                }
            }
            "sleep" => tokio::time::sleep(Duration::from_millis(arg_u64(args, "ms", 0))).await,
            "kill_client" => {
                let id = arg_str(args, "id")?.to_owned();
                self.fleet
                    .as_mut()
                    .ok_or_else(|| anyhow!("no fleet"))?
                    .kill_client(&id)?;
            }
            "restart_client" => {
                let id = arg_str(args, "id")?.to_owned();
                self.fleet
                    .as_mut()
                    .ok_or_else(|| anyhow!("no fleet"))?
                    .restart_client(&id)
                    .await?;
            }
            "stop" => {
                if let Some(f) = self.fleet.as_mut() {
                    f.stop_all();
                }
            }
            "assert_results" => {
                let want = arg_u64(args, "count", 0) as usize;
                let got = self.tracked(args)?.signatures().len();
                self.check(index, &a.action, got == want, format!("{got} results delivered, expected {want}"));
            }
            "assert_signatures" => {
                let pattern: Vec<String> = serde_json::from_value(args.get("sequence").cloned().unwrap_or_default())?;
                let got = self.tracked(args)?.signatures();
                let mut ok = got.len() == pattern.len();
                for ((_, sig), want) in got.iter().zip(&pattern) {
                    if want != "*" && *sig != self.module_signature(want)? {
                        ok = false;
                    }
                }
                let names: Vec<String> = got.iter().map(|(_, s)| self.name_of(s)).collect();
                self.check(index, &a.action, ok, format!("got {names:?}, expected {pattern:?}"));
            }
            "assert_swap" => {
                let (from, to) = (arg_str(args, "from")?, arg_str(args, "to")?);
                let (from_sig, to_sig) = (self.module_signature(from)?, self.module_signature(to)?);
                let label = arg_str(args, "label")?;
                let mark = self
                    .deploys
                    .get(to)
                    .ok_or_else(|| anyhow!("module {to:?} was never deployed"))?;
                let before = mark.at_start.get(label).copied().unwrap_or(0);
                let in_flight = mark.at_ack.get(label).copied().unwrap_or(0);
                let got = self.tracked(args)?.signatures();
                let mut problems = Vec::new();
                let mut switched = false;
                for (it, sig) in &got {
                    let i = *it as usize;
                    if *sig == to_sig {
                        switched = true;
                    } else if *sig == from_sig {
                        if switched {
                            problems.push(format!("iteration {it} went back to {from}"));
                        }
                    } else {
                        problems.push(format!("iteration {it} carries unknown signature {sig}"));
                    }
                    if i < before && *sig != from_sig {
                        problems.push(format!("iteration {it} finished before the deploy but is not {from}"));
                    }
                    if i > in_flight && *sig != to_sig {
                        problems.push(format!("iteration {it} started after the ack but is not {to}"));
                    }
                }
                let names: Vec<String> = got.iter().map(|(_, s)| self.name_of(s)).collect();
                let detail = format!(
                    "sequence {names:?}; deploy began after {before} and was acked during iteration {in_flight}{}",
                    if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
                );
                self.check(index, &a.action, problems.is_empty(), detail);
            }
            "assert_purity" => {
                let records = read_log(&self.fleet()?.audit_path())?;
                let v = signature_violations(&records);
                let detail = if v.is_empty() {
                    format!("{} audit records, no violations", records.len())
                } else {
                    v.join("; ")
                };
                self.check(index, &a.action, v.is_empty(), detail);
            }
            "assert_start_times" => {
                let now = self.fleet()?.nodes().await?;
                let initial = self
                    .initial_nodes
                    .as_ref()
                    .ok_or_else(|| anyhow!("no start snapshot"))?;
                let same = now.bridge == initial.bridge && now.clients == initial.clients;
                self.check(
                    index,
                    &a.action,
                    same,
                    format!(
                        "bridge pid {} started {}; {} clients {}",
                        now.bridge.pid,
                        now.bridge.started_at_ms,
                        now.clients.len(),
                        if same { "unchanged" } else { "changed" }
                    ),
                );
            }
            other => bail!("unknown action {other:?}"),
        }
        Ok(())
    }

    fn name_of(&self, sig: &str) -> String {
        self.modules
            .iter()
            .find(|(_, src)| signature(src) == sig)
            .map_or_else(|| sig.to_owned(), |(n, _)| n.clone())
    }
}
