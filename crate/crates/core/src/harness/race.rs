//! Randomized deploy-versus-iteration races.

use std::time::Duration;

use anyhow::bail;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Fleet;
use crate::audit::{read_log, signature_violations};
use crate::cli::WatchEvent;
use crate::codeswap::{signature, Target};
use crate::prng::XorShift64Star;
use crate::protocol::{STATE_DEPLOYED, STATE_FINISHED, STATE_INCONSISTENT};
use crate::spec::ClientSelector;

const RACE_MODULE: &str = "fn custom_code(x) { let s = 0.0; for v in x { s += v; } s / x.len() }";

#[derive(Debug, Clone)]
pub struct RaceOptions {
    pub trials: usize,
    pub seed: u64,
    pub min_clients: usize,
    pub max_clients: usize,
    pub iterations: u32,
    pub samples: u64,
    pub frequency: u32,
    /// The second deployment starts uniformly within this window after
    /// submission.
    pub window: Duration,
}

impl Default for RaceOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            seed: 7,
            min_clients: 3,
            max_clients: 9,
            iterations: 3,
            samples: 50,
            frequency: 10,
            window: Duration::from_millis(60),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSummary {
    pub clients: usize,
    pub updated: usize,
    pub delay_ms: f64,
    pub delivered: usize,
    pub discarded_envelopes: usize,
    pub inconsistent: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RaceReport {
    pub trials: usize,
    pub delivered_iterations: usize,
    pub iterations_with_discards: usize,
    pub inconsistent_iterations: usize,
    pub violations: Vec<String>,
    pub per_trial: Vec<TrialSummary>,
}

fn pick(rng: &mut XorShift64Star, from: &[String], n: usize) -> Vec<String> {
    let mut ids = from.to_vec();
    for i in 0..n {
        let j = i + rng.below((ids.len() - i) as u64) as usize;
        ids.swap(i, j);
    }
    ids.truncate(n);
    ids.sort();
    ids
}

/// Each trial deploys a base module to 3..=9 clients, submits a custom
/// assignment over them and, at a random moment, deploys a new module to a
/// random subset. Every delivered iteration is then checked against the
/// audit log.
pub async fn race_trials(fleet: &Fleet, opts: &RaceOptions) -> anyhow::Result<RaceReport> {
    let all = fleet.client_ids();
    if all.len() < opts.max_clients {
        bail!("race trials need {} clients, fleet has {}", opts.max_clients, all.len());
    }
    let analyst = fleet.analyst("racer");
    let mut rng = XorShift64Star::new(opts.seed);
    let mut report = RaceReport {
        trials: opts.trials,
        ..RaceReport::default()
    };
    let mut trial_ids = Vec::new();

    for t in 0..opts.trials {
        let span = (opts.max_clients - opts.min_clients + 1) as u64;
        let n = opts.min_clients + rng.below(span) as usize;
        let chosen = pick(&mut rng, &all, n);
        let k = 1 + rng.below(n as u64) as usize;
        let updated = pick(&mut rng, &chosen, k);
        let delay = opts.window.mul_f64(rng.next_f64());

        let base = format!("{RACE_MODULE}\n// trial {t} base\n");
        let next = format!("{RACE_MODULE}\n// trial {t} update\n");
        let (base_sig, next_sig) = (signature(&base), signature(&next));
        let r = analyst
            .deploy(Target::Onboard, &base, &ClientSelector::Ids(chosen.clone()))
            .await?;
        if r.state != STATE_DEPLOYED {
            bail!("trial {t}: base deployment failed: {r:?}");
        }

        let spec = json!({
            "name": format!("race-{t}"),
            "user_id": "racer",
            "clients": {"ids": chosen},
            "onboard": {
                "computation": "custom",
                "signals": ["speed"],
                "frequency": opts.frequency,
                "samples": opts.samples,
            },
            "offboard": {"computation": "average", "iterations": opts.iterations},
        });
        let (aid, _) = analyst.submit(&spec).await?;
        let watcher = {
            let analyst = analyst.clone();
            let aid = aid.clone();
            tokio::spawn(async move { analyst.watch(&aid, |_| {}).await })
        };
        tokio::time::sleep(delay).await;
        analyst
            .deploy(Target::Onboard, &next, &ClientSelector::Ids(updated.clone()))
            .await?;
        let events = watcher.await??;

        let mut summary = TrialSummary {
            clients: n,
            updated: updated.len(),
            delay_ms: delay.as_secs_f64() * 1e3,
            delivered: 0,
            discarded_envelopes: 0,
            inconsistent: 0,
        };
        let mut outcomes = 0;
        for ev in &events {
            match ev {
                WatchEvent::Result(r) => {
                    outcomes += 1;
                    summary.delivered += 1;
                    summary.discarded_envelopes += r.discarded.len();
                    if !r.discarded.is_empty() {
                        report.iterations_with_discards += 1;
                    }
                    if r.signature != base_sig && r.signature != next_sig {
                        report.violations.push(format!(
                            "{aid} iteration {}: unexpected signature {}",
                            r.iteration, r.signature
                        ));
                    }
                }
                WatchEvent::Status(s) if s.state == STATE_FINISHED => {}
                WatchEvent::Status(s) => {
                    outcomes += 1;
                    if s.state == STATE_INCONSISTENT {
                        summary.inconsistent += 1;
                        report.inconsistent_iterations += 1;
                    } else {
                        report.violations.push(format!(
                            "{aid} iteration {:?}: {} {}",
                            s.iteration, s.state, s.message
                        ));
                    }
                }
            }
        }
        if outcomes != opts.iterations as usize {
            report.violations.push(format!(
                "{aid}: {outcomes} iteration outcomes for {} iterations",
                opts.iterations
            ));
        }
        report.delivered_iterations += summary.delivered;
        report.per_trial.push(summary);
        trial_ids.push(aid);
    }

    let records = read_log(&fleet.audit_path())?;
    let ours: Vec<_> = records
        .into_iter()
        .filter(|r| trial_ids.contains(&r.assignment_id))
        .collect();
    report.violations.extend(signature_violations(&ours));
    Ok(report)
}
