//! Active-code replacement versus a scripted stop/copy/restart redeploy.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use super::{BinPaths, Fleet, FleetOptions};
use crate::codeswap::Target;
use crate::prng::XorShift64Star;
use crate::protocol::{NodesReport, STATE_DEPLOYED};
use crate::spec::ClientSelector;

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub clients: usize,
    pub runs: usize,
    /// Size of the installation payload copied on every redeploy.
    pub payload_bytes: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            clients: 3,
            runs: 5,
            payload_bytes: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub clients: usize,
    pub runs: usize,
    pub replace_offboard_ms: Vec<f64>,
    pub replace_onboard_ms: Vec<f64>,
    pub redeploy_ms: Vec<f64>,
    pub mean_offboard_ms: f64,
    pub mean_onboard_ms: f64,
    pub mean_redeploy_ms: f64,
    /// Mean redeploy time over the slower of the two mean replace times.
    pub ratio: f64,
    pub start_times_constant_during_replace: bool,
    pub start_times_changed_on_every_redeploy: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn identities(r: &NodesReport) -> Vec<(String, u32, u64)> {
    let mut out = vec![("bridge".to_owned(), r.bridge.pid, r.bridge.started_at_ms)];
    out.extend(
        r.clients
            .iter()
            .map(|c| (c.client_id.clone(), c.process.pid, c.process.started_at_ms)),
    );
    out
}

fn copy_synced(from: &Path, to: &Path) -> std::io::Result<()> {
    if let Some(dir) = to.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::copy(from, to)?;
    File::open(to)?.sync_all()
}

pub async fn bench_replace_vs_redeploy(bins: BinPaths, opts: &BenchOptions) -> anyhow::Result<BenchReport> {
    let fleet_opts = FleetOptions {
        clients: opts.clients,
        ..FleetOptions::default()
    };
    let mut fleet = Fleet::start(bins, fleet_opts, None).await?;
    let analyst = fleet.analyst("bench");

    let release = fleet.work_dir().join("release").join("payload.bin");
    std::fs::create_dir_all(release.parent().expect("has parent"))?;
    {
        let mut rng = XorShift64Star::new(0x5eed);
        let bytes: Vec<u8> = (0..opts.payload_bytes.div_ceil(8))
            .flat_map(|_| rng.next_u64().to_le_bytes())
            .take(opts.payload_bytes)
            .collect();
        let mut f = File::create(&release)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }

    let before = identities(&fleet.nodes().await?);
    let mut offboard = Vec::new();
    let mut onboard = Vec::new();
    for run in 0..opts.runs {
        let source = format!(
            "fn custom_code(x) {{ let s = 0.0; for v in x {{ s += v; }} s / x.len() }}\n// revision {run}\n"
        );
        let t = Instant::now();
        let r = analyst.deploy(Target::Offboard, &source, &ClientSelector::All).await?;
        offboard.push(t.elapsed().as_secs_f64() * 1e3);
        if r.state != STATE_DEPLOYED {
            bail!("off-board replace failed: {r:?}");
        }

        let t = Instant::now();
        let r = analyst.deploy(Target::Onboard, &source, &ClientSelector::All).await?;
        onboard.push(t.elapsed().as_secs_f64() * 1e3);
        if r.state != STATE_DEPLOYED || r.acked.len() != opts.clients {
            bail!("on-board replace failed: {r:?}");
        }
    }
    let after = identities(&fleet.nodes().await?);
    let constant = before == after;

    let nodes: Vec<String> = std::iter::once("bridge".to_owned()).chain(fleet.client_ids()).collect();
    let mut redeploy = Vec::new();
    let mut changed_every_time = true;
    let mut previous = after;
    for _ in 0..opts.runs {
        let t = Instant::now();
        fleet.stop_all();
        for node in &nodes {
            copy_synced(&release, &fleet.install_dir(node).join("payload.bin"))
                .with_context(|| format!("copying payload for {node}"))?;
        }
        fleet.start_nodes().await?;
        redeploy.push(t.elapsed().as_secs_f64() * 1e3);

        let now = identities(&fleet.nodes().await?);
        let all_new = now.iter().all(|n| !previous.contains(n)) && now.len() == previous.len();
        changed_every_time &= all_new;
        previous = now;
    }
    fleet.stop_all();

    let (mean_off, mean_on, mean_re) = (mean(&offboard), mean(&onboard), mean(&redeploy));
    Ok(BenchReport {
        clients: opts.clients,
        runs: opts.runs,
        replace_offboard_ms: offboard,
        replace_onboard_ms: onboard,
        redeploy_ms: redeploy,
        mean_offboard_ms: mean_off,
        mean_onboard_ms: mean_on,
        mean_redeploy_ms: mean_re,
        ratio: mean_re / mean_off.max(mean_on),
        start_times_constant_during_replace: constant,
        start_times_changed_on_every_redeploy: changed_every_time,
    })
}
