//! Multi-process harness: runs a bridge and client processes on loopback,
//! plays scenarios, runs race trials and the replace-versus-redeploy
//! benchmark.

mod bench;
mod race;
mod scenario;

pub use bench::{bench_replace_vs_redeploy, BenchOptions, BenchReport};
pub use race::{race_trials, RaceOptions, RaceReport};
pub use scenario::{run_actions, run_scenario, Action, Check, ScenarioReport};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use tokio::time::Instant;

use crate::cli::Analyst;
use crate::codeswap::SANDBOX_BIN;
use crate::protocol::NodesReport;

pub const BRIDGE_BIN: &str = "fleet-bridge";
pub const CLIENT_BIN: &str = "fleet-client";

/// Locations of the node executables.
#[derive(Debug, Clone)]
pub struct BinPaths {
    pub bridge: PathBuf,
    pub client: PathBuf,
    pub sandbox: PathBuf,
}

impl BinPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            bridge: dir.join(BRIDGE_BIN),
            client: dir.join(CLIENT_BIN),
            sandbox: dir.join(SANDBOX_BIN),
        }
    }

    /// `$FLEETSWAP_BIN_DIR`, else the directory of the running executable or
    /// its parent.
    pub fn locate() -> anyhow::Result<Self> {
        if let Some(dir) = std::env::var_os("FLEETSWAP_BIN_DIR") {
            return Ok(Self::in_dir(Path::new(&dir)));
        }
        let exe = std::env::current_exe()?;
        let dir = exe.parent();
        for d in [dir, dir.and_then(Path::parent)].into_iter().flatten() {
            if d.join(BRIDGE_BIN).is_file() {
                return Ok(Self::in_dir(d));
            }
        }
        bail!("{BRIDGE_BIN} not found near {}", exe.display())
    }
}

#[derive(Debug, Clone)]
pub struct FleetOptions {
    pub clients: usize,
    /// Client `cN` gets sensor seed `base_seed + N`.
    pub base_seed: u64,
    pub time_scale: f64,
    /// On-board custom code timeout.
    pub client_timeout: Duration,
    /// Off-board custom code timeout.
    pub bridge_timeout: Duration,
    pub client_grace: Duration,
    pub collect_cap: Option<Duration>,
    /// Models assigned round-robin.
    pub models: Vec<String>,
}

impl Default for FleetOptions {
    fn default() -> Self {
        Self {
            clients: 3,
            base_seed: 1,
            time_scale: 1000.0,
            client_timeout: Duration::from_secs(10),
            bridge_timeout: Duration::from_secs(10),
            client_grace: Duration::from_secs(30),
            collect_cap: None,
            models: vec!["type_a".into()],
        }
    }
}

impl FleetOptions {
    pub fn client_ids(&self) -> Vec<String> {
        (1..=self.clients).map(|i| format!("c{i}")).collect()
    }

    pub fn client_seed(&self, client_id: &str) -> u64 {
        let n: u64 = client_id.trim_start_matches('c').parse().unwrap_or(0);
        self.base_seed + n
    }

    fn model(&self, client_id: &str) -> &str {
        let n: usize = client_id.trim_start_matches('c').parse().unwrap_or(1);
        let models = if self.models.is_empty() { &[] as &[String] } else { &self.models };
        models
            .get((n.max(1) - 1) % models.len().max(1))
            .map_or("type_a", String::as_str)
    }
}

struct Node {
    child: Child,
    stdin: Option<ChildStdin>,
}

impl Node {
    /// Closes stdin so the node exits on its own, then reaps it.
    fn stop(mut self) {
        self.stdin.take();
        match wait_timeout::ChildExt::wait_timeout(&mut self.child, Duration::from_secs(5)) {
            Ok(Some(_)) => {}
            _ => {
                let _ = self.child.kill();
                let _ = self.child.wait();
            }
        }
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A bridge plus client processes on loopback.
pub struct Fleet {
    pub opts: FleetOptions,
    bins: BinPaths,
    work: PathBuf,
    _tmp: Option<tempfile::TempDir>,
    bridge: Option<Node>,
    bridge_addr: SocketAddr,
    clients: BTreeMap<String, Node>,
}

impl Fleet {
    /// Starts the bridge and every client and waits for registration. The
    /// work directory holds code stores, logs and the audit log.
    pub async fn start(bins: BinPaths, opts: FleetOptions, work: Option<PathBuf>) -> anyhow::Result<Self> {
        let (work, tmp) = match work {
            Some(w) => {
                std::fs::create_dir_all(&w)?;
                (w, None)
            }
            None => {
                let t = tempfile::Builder::new().prefix("fleet-").tempdir()?;
                (t.path().to_owned(), Some(t))
            }
        };
        let mut fleet = Self {
            opts,
            bins,
            work,
            _tmp: tmp,
            bridge: None,
            bridge_addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            clients: BTreeMap::new(),
        };
        fleet.start_nodes().await?;
        Ok(fleet)
    }

    pub fn work_dir(&self) -> &Path {
        &self.work
    }

    pub fn audit_path(&self) -> PathBuf {
        self.work.join("audit.jsonl")
    }

    pub fn install_dir(&self, node: &str) -> PathBuf {
        self.work.join("install").join(node)
    }

    pub fn bridge_addr(&self) -> SocketAddr {
        self.bridge_addr
    }

    pub fn analyst(&self, user: &str) -> Analyst {
        Analyst::new(self.bridge_addr, user)
    }

    pub fn client_ids(&self) -> Vec<String> {
        self.clients.keys().cloned().collect()
    }

    pub(crate) async fn start_nodes(&mut self) -> anyhow::Result<()> {
        self.start_bridge()?;
        for id in self.opts.client_ids() {
            self.spawn_client(&id)?;
        }
        self.wait_registered(Duration::from_secs(30)).await
    }

    fn log_file(&self, name: &str) -> anyhow::Result<File> {
        let dir = self.work.join("logs");
        std::fs::create_dir_all(&dir)?;
        Ok(File::options().create(true).append(true).open(dir.join(format!("{name}.log")))?)
    }

    fn start_bridge(&mut self) -> anyhow::Result<()> {
        let install = self.install_dir("bridge");
        std::fs::create_dir_all(&install)?;
        let mut child = Command::new(&self.bins.bridge)
            .arg("--listen")
            .arg("127.0.0.1:0")
            .arg("--store")
            .arg(install.join("store"))
            .arg("--audit")
            .arg(self.audit_path())
            .arg("--time-scale")
            .arg(self.opts.time_scale.to_string())
            .arg("--client-grace")
            .arg(format!("{}ms", self.opts.client_grace.as_millis()))
            .arg("--timeout")
            .arg(format!("{}ms", self.opts.bridge_timeout.as_millis()))
            .arg("--sandbox")
            .arg(&self.bins.sandbox)
            .arg("--stdin-shutdown")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(self.log_file("bridge")?)
            .spawn()
            .with_context(|| format!("starting {}", self.bins.bridge.display()))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line)?;
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .ok_or_else(|| anyhow!("unexpected bridge banner {line:?}"))?
            .parse()?;
        self.bridge_addr = addr;
        let stdin = child.stdin.take();
        self.bridge = Some(Node { child, stdin });
        Ok(())
    }

    fn spawn_client(&mut self, id: &str) -> anyhow::Result<()> {
        let install = self.install_dir(id);
        std::fs::create_dir_all(&install)?;
        let mut cmd = Command::new(&self.bins.client);
        cmd.arg("--client-id")
            .arg(id)
            .arg("--model")
            .arg(self.opts.model(id))
            .arg("--bridge")
            .arg(self.bridge_addr.to_string())
            .arg("--seed")
            .arg(self.opts.client_seed(id).to_string())
            .arg("--timeout")
            .arg(format!("{}ms", self.opts.client_timeout.as_millis()))
            .arg("--time-scale")
            .arg(self.opts.time_scale.to_string())
            .arg("--store")
            .arg(install.join("store"))
            .arg("--sandbox")
            .arg(&self.bins.sandbox)
            .arg("--stdin-shutdown");
        if let Some(cap) = self.opts.collect_cap {
            cmd.arg("--collect-cap").arg(format!("{}ms", cap.as_millis()));
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(self.log_file(id)?)
            .spawn()
            .with_context(|| format!("starting {}", self.bins.client.display()))?;
        let stdin = child.stdin.take();
        self.clients.insert(id.to_owned(), Node { child, stdin });
        Ok(())
    }

    /// Waits until every running client process is registered under its
    /// current pid.
    pub async fn wait_registered(&self, limit: Duration) -> anyhow::Result<()> {
        let deadline = Instant::now() + limit;
        let analyst = self.analyst("harness");
        loop {
            if let Ok(report) = analyst.nodes().await {
                let all = self.clients.iter().all(|(id, node)| {
                    report
                        .clients
                        .iter()
                        .any(|c| &c.client_id == id && c.process.pid == node.child.id())
                });
                if all {
                    return Ok(());
                }
            }
            if Instant::now() >= deadline {
                bail!("clients did not register within {limit:?}");
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    pub async fn nodes(&self) -> anyhow::Result<NodesReport> {
        Ok(self.analyst("harness").nodes().await?)
    }

    /// Kills a client without warning.
    pub fn kill_client(&mut self, id: &str) -> anyhow::Result<()> {
        let node = self.clients.remove(id).ok_or_else(|| anyhow!("no running client {id}"))?;
        node.kill();
        Ok(())
    }

    pub async fn restart_client(&mut self, id: &str) -> anyhow::Result<()> {
        if let Some(node) = self.clients.remove(id) {
            node.stop();
        }
        self.spawn_client(id)?;
        self.wait_registered(Duration::from_secs(30)).await
    }

    /// Gracefully stops every node.
    pub fn stop_all(&mut self) {
        for (_, node) in std::mem::take(&mut self.clients) {
            node.stop();
        }
        if let Some(b) = self.bridge.take() {
            b.stop();
        }
    }
}

impl Drop for Fleet {
    fn drop(&mut self) {
        for (_, node) in std::mem::take(&mut self.clients) {
            node.kill();
        }
        if let Some(b) = self.bridge.take() {
            b.kill();
        }
    }
}
