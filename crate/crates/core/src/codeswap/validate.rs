use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::script::{self, ENTRY_POINT};
use super::Target;
use crate::prng::XorShift64Star;

/// Validation stages in the order they run. The capability scan runs before
/// any probe executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Syntax,
    EntryPoint,
    Capability,
    ProbeRun,
    ReturnType,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Syntax => "syntax",
            Stage::EntryPoint => "entry_point",
            Stage::Capability => "capability",
            Stage::ProbeRun => "probe_run",
            Stage::ReturnType => "return_type",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    /// Last stage that ran: the failing one, or the final stage on success.
    pub stage: Stage,
    pub violations: Vec<(Stage, String)>,
}

impl ValidationReport {
    fn pass() -> Self {
        Self {
            ok: true,
            stage: Stage::ReturnType,
            violations: Vec::new(),
        }
    }

    fn fail(stage: Stage, violations: Vec<String>) -> Self {
        Self {
            ok: false,
            stage,
            violations: violations.into_iter().map(|v| (stage, v)).collect(),
        }
    }

    /// One-line summary of the first violation, e.g.
    /// `entry_point: custom_code must take exactly one argument`.
    pub fn summary(&self) -> String {
        match self.violations.first() {
            None => "ok".into(),
            Some((stage, msg)) => format!("{stage}: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    /// Seed for the random probe vectors; pick a fresh one per deployment.
    pub probe_seed: u64,
    /// Wall-clock budget per probe call.
    pub probe_timeout: Duration,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            probe_seed: rand::random(),
            probe_timeout: Duration::from_secs(10),
        }
    }
}

pub const RANDOM_PROBES: usize = 8;
pub const MAX_PROBE_LEN: u64 = 64;

/// The fixed probe `[0, 1, 2]` followed by [`RANDOM_PROBES`] seeded vectors
/// of length 1..=64 with values uniform in [-100, 100).
pub fn probe_inputs(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = XorShift64Star::new(seed);
    let mut out = vec![vec![0.0, 1.0, 2.0]];
    for _ in 0..RANDOM_PROBES {
        let len = 1 + rng.below(MAX_PROBE_LEN) as usize;
        out.push((0..len).map(|_| rng.next_f64() * 200.0 - 100.0).collect());
    }
    out
}

/// Parameters the probes see, shaped like the real call site for `target`.
pub(crate) fn probe_params(target: Target, input_len: usize) -> Map<String, Value> {
    let mut p = Map::new();
    match target {
        Target::Onboard => {
            p.insert("input_model".into(), Value::Null);
        }
        Target::Offboard => {
            p.insert("n_inputs".into(), Value::from(1));
            p.insert("input_lengths".into(), Value::from(vec![input_len]));
            p.insert("client_ids".into(), Value::from(vec!["probe"]));
            p.insert("iteration".into(), Value::from(0));
        }
    }
    p
}

/// Syntax, entry point and capability checks; shared with the sandbox
/// process, which repeats them before running anything.
pub(crate) fn static_checks(source: &str) -> Result<rhai::AST, ValidationReport> {
    let engine = script::new_engine(&Map::new(), None);
    let ast = script::compile(&engine, source)
        .map_err(|e| ValidationReport::fail(Stage::Syntax, vec![e]))?;

    let arities = script::entry_arities(&ast);
    if arities.is_empty() {
        return Err(ValidationReport::fail(
            Stage::EntryPoint,
            vec![format!("no function named {ENTRY_POINT}")],
        ));
    }
    if let Some(&bad) = arities.iter().find(|&&n| n != 1) {
        return Err(ValidationReport::fail(
            Stage::EntryPoint,
            vec![format!("{ENTRY_POINT} must take exactly one argument, found {bad}")],
        ));
    }

    let hits = script::capability_scan(source);
    if !hits.is_empty() {
        return Err(ValidationReport::fail(
            Stage::Capability,
            hits.iter()
                .map(|h| {
                    format!(
                        "forbidden {} facility `{}` at byte {}",
                        h.capability, h.identifier, h.offset
                    )
                })
                .collect(),
        ));
    }
    Ok(ast)
}

/// Runs the validation stages in order and stops at the first failing one.
pub fn validate_custom(source: &str, target: Target, opts: &ValidationOptions) -> ValidationReport {
    let ast = match static_checks(source) {
        Ok(ast) => ast,
        Err(report) => return report,
    };

    let probes = probe_inputs(opts.probe_seed);
    let mut outputs = Vec::with_capacity(probes.len());
    for (i, input) in probes.iter().enumerate() {
        let params = probe_params(target, input.len());
        let deadline = Instant::now() + opts.probe_timeout;
        let engine = script::new_engine(&params, Some(deadline));
        match script::call_entry(&engine, &ast, input) {
            Ok(v) => outputs.push(script::to_transport(&v)),
            Err(e) => {
                let msg = if Instant::now() >= deadline {
                    format!("probe {i} (length {}) exceeded {:?}", input.len(), opts.probe_timeout)
                } else {
                    format!("probe {i} (length {}) failed: {e}", input.len())
                };
                return ValidationReport::fail(Stage::ProbeRun, vec![msg]);
            }
        }
    }

    let type_errors: Vec<String> = outputs
        .iter()
        .enumerate()
        .filter_map(|(i, out)| {
            script::check_return(out)
                .err()
                .map(|e| format!("probe {i}: {e}"))
        })
        .collect();
    if !type_errors.is_empty() {
        return ValidationReport::fail(Stage::ReturnType, type_errors);
    }
    ValidationReport::pass()
}
