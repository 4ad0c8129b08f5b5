//! Task handler: collection, on-board computation, envelope.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;
use tokio::time::Instant;

use crate::codeswap::{CodeStore, ExecError, Sandbox, StoreError, Target};
use crate::envelope::{builtin_signature, ErrorRecord, Payload, ResultEnvelope};
use crate::numeric::{self, Histogram};
use crate::sensors::{SensorError, SignalStream};
use crate::spec::{FilterExpr, OnboardComputation, TaskSpec};

#[derive(Debug, Error, PartialEq)]
pub enum CollectError {
    #[error("collection cap of {cap:?} reached with {accepted} of {wanted} samples accepted")]
    Partial { accepted: usize, wanted: u64, cap: Duration },
    #[error("{message} ({accepted} of {wanted} samples accepted)")]
    Stream {
        accepted: usize,
        wanted: u64,
        message: String,
    },
}

/// Draws samples every `interval` until `wanted` samples pass the filter.
/// Draw `k` is due at `k * interval` after the start; collection gives up
/// once the next draw would be due after `cap`.
pub async fn collect_samples(
    stream: &mut SignalStream,
    filter: Option<&FilterExpr>,
    wanted: u64,
    interval: Duration,
    cap: Duration,
) -> Result<Vec<f64>, CollectError> {
    let start = Instant::now();
    let mut buffer = Vec::with_capacity(wanted.min(1 << 20) as usize);
    let mut drawn: u64 = 0;
    while (buffer.len() as u64) < wanted {
        let due = interval.mul_f64(drawn as f64);
        if due > cap {
            return Err(CollectError::Partial {
                accepted: buffer.len(),
                wanted,
                cap,
            });
        }
        // Sleep only when at least a millisecond ahead; finer intervals are
        // drawn in bursts.
        if due > start.elapsed() + Duration::from_millis(1) {
            tokio::time::sleep_until(start + due).await;
        } else if drawn % 4096 == 4095 {
            tokio::task::yield_now().await;
        }
        let v = stream.next_sample().map_err(|e: SensorError| CollectError::Stream {
            accepted: buffer.len(),
            wanted,
            message: e.to_string(),
        })?;
        drawn += 1;
        if filter.is_none_or(|f| f.eval(v)) {
            buffer.push(v);
        }
    }
    Ok(buffer)
}

/// Where and how on-board custom code runs.
pub struct ComputeContext<'a> {
    pub store: &'a CodeStore,
    pub sandbox: &'a Sandbox,
    pub timeout: Duration,
}

/// Applies the task's computation to a full buffer. Custom modules are
/// loaded from the store on every call, so a replacement takes effect at the
/// next task.
pub fn onboard_compute(task: &TaskSpec, buffer: &[f64], ctx: &ComputeContext<'_>) -> ResultEnvelope {
    let aid = &task.assignment_id;
    let cid = &task.client_id;
    let it = task.iteration;
    let computation = task.onboard.computation;
    let builtin = builtin_signature(computation.keyword());
    let ok = |sig: String, p: Payload| ResultEnvelope::ok(aid, cid, it, sig, p);
    let fail = |sig: String, e: ErrorRecord| ResultEnvelope::failed(aid, cid, it, sig, e);

    match computation {
        OnboardComputation::Collect => ok(builtin, Payload::Vector(buffer.to_vec())),
        OnboardComputation::Mean => match numeric::mean(buffer) {
            Some(m) => ok(builtin, Payload::Scalar(m)),
            None => fail(builtin, ErrorRecord::new("empty", "no samples to average")),
        },
        OnboardComputation::Histogram => match Histogram::from_samples(buffer) {
            Some(h) => ok(builtin, Payload::Vector(h.counts_as())),
            None => fail(builtin, ErrorRecord::new("empty", "no samples to bin")),
        },
        OnboardComputation::Custom => {
            let module = match ctx.store.load_module(&task.user_id, Target::Onboard) {
                Ok(m) => m,
                Err(StoreError::NotDeployed { .. }) => {
                    return fail(
                        "none".into(),
                        ErrorRecord::new(
                            "not_deployed",
                            format!("no custom code for user {}", task.user_id),
                        ),
                    )
                }
                Err(e) => return fail("none".into(), ErrorRecord::new("store", e.to_string())),
            };
            let mut params = task.onboard.parameters.clone();
            params.insert(
                "input_model".into(),
                task.input_model
                    .as_ref()
                    .map_or(Value::Null, |m| Value::from(m.clone())),
            );
            params.insert("iteration".into(), Value::from(it));
            match ctx.sandbox.execute(&module, buffer, &params, ctx.timeout) {
                Ok(out) => ok(out.signature, out.value),
                Err(e) => {
                    let mut rec = ErrorRecord::new(e.reason(), e.to_string());
                    if let ExecError::Timeout { elapsed, .. } = &e {
                        rec.elapsed_ms = Some(elapsed.as_secs_f64() * 1e3);
                    }
                    fail(module.signature.clone(), rec)
                }
            }
        }
    }
}
