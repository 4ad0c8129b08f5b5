//! Assignment handler: the per-assignment iteration loop.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::mpsc::UnboundedReceiver;
use tokio::time::{timeout_at, Instant};

use super::majority::majority_filter;
use super::offboard::{offboard_compute, OffboardContext};
use super::{AssignmentRecord, Routed, State};
use crate::audit::{AuditEvent, AuditRecord};
use crate::envelope::{builtin_signature, ErrorRecord, Payload, ResultEnvelope};
use crate::protocol::{
    AssignmentStatus, IterationResult, BRIDGE_ID, INCONSISTENT_MESSAGE, STATE_FAILED,
    STATE_FINISHED, STATE_INCONSISTENT,
};
use crate::spec::{split_into_tasks, AssignmentSpec, ResultFlow};
use crate::wire::{Kind, Message};

pub(crate) async fn run(
    state: Arc<State>,
    id: String,
    spec: AssignmentSpec,
    clients: Vec<String>,
    record: Arc<AssignmentRecord>,
    mut rx: UnboundedReceiver<Routed>,
) {
    let connected = spec.onboard.result_flow() == ResultFlow::Connected;
    let mut carry: Option<Vec<f64>> = None;

    for iteration in 0..spec.offboard.iterations {
        let envelopes = run_iteration(&state, &id, &spec, &clients, iteration, carry.as_deref(), &mut rx).await;
        if let Some(model) = complete_iteration(&state, &id, &spec, &record, iteration, envelopes).await {
            if connected {
                carry = Some(model);
            }
        }
    }

    state.close_route(&id);
    state
        .audit
        .record(AuditRecord::new(&id, None, AuditEvent::Finished));
    let done = AssignmentStatus {
        state: STATE_FINISHED.into(),
        iteration: None,
        message: String::new(),
        discarded: Vec::new(),
        errors: BTreeMap::new(),
    };
    if let Ok(msg) = Message::with_body(Kind::Status, id.clone(), spec.user_id.clone(), &done) {
        record.publish(msg, true);
    }
    log::info!("assignment {id} finished");
}

/// Dispatches one iteration and gathers an envelope from every client,
/// synthesizing error envelopes for clients that are unreachable, vanish or
/// stay silent past the deadline.
async fn run_iteration(
    state: &State,
    id: &str,
    spec: &AssignmentSpec,
    clients: &[String],
    iteration: u32,
    carry: Option<&[f64]>,
    rx: &mut UnboundedReceiver<Routed>,
) -> BTreeMap<String, ResultEnvelope> {
    let mut envelopes = BTreeMap::new();
    let tasks = match split_into_tasks(id, spec, clients, iteration, carry) {
        Ok(t) => t,
        Err(e) => {
            for c in clients {
                envelopes.insert(c.clone(), failed(id, c, iteration, ErrorRecord::new("dispatch", e.to_string())));
            }
            return envelopes;
        }
    };

    let mut pending = BTreeSet::new();
    for task in &tasks {
        let sent = state.outbox(&task.client_id).is_some_and(|out| {
            Message::with_body(Kind::Task, id, &spec.user_id, task)
                .map(|m| out.send(m).is_ok())
                .unwrap_or(false)
        });
        if sent {
            state.audit.record(
                AuditRecord::new(id, Some(iteration), AuditEvent::Dispatch).client(&task.client_id),
            );
            pending.insert(task.client_id.clone());
        } else {
            envelopes.insert(
                task.client_id.clone(),
                failed(id, &task.client_id, iteration, ErrorRecord::new("unreachable", "client not connected")),
            );
        }
    }

    let nominal = spec.onboard.nominal_seconds() / state.config.time_scale.max(1e-9);
    let limit = Duration::from_secs_f64(nominal) + state.config.client_grace;
    let deadline = Instant::now() + limit;
    while !pending.is_empty() {
        let item = match timeout_at(deadline, rx.recv()).await {
            Ok(Some(item)) => item,
            Ok(None) | Err(_) => break,
        };
        match item {
            Routed::Reply { client_id, msg } => {
                if msg.kind != Kind::Result || !pending.contains(&client_id) {
                    continue;
                }
                let env = match msg.body_as::<ResultEnvelope>() {
                    Ok(env) if env.iteration == iteration && env.client_id == client_id => env,
                    Ok(_) => continue,
                    Err(e) => failed(id, &client_id, iteration, ErrorRecord::new("protocol", e.to_string())),
                };
                pending.remove(&client_id);
                envelopes.insert(client_id, env);
            }
            Routed::Gone { client_id } => {
                if pending.remove(&client_id) {
                    envelopes.insert(
                        client_id.clone(),
                        failed(id, &client_id, iteration, ErrorRecord::new("disconnected", "client disconnected")),
                    );
                }
            }
        }
    }
    for client_id in pending {
        let mut err = ErrorRecord::new("timeout", format!("no result within {limit:?}"));
        err.elapsed_ms = Some(limit.as_secs_f64() * 1e3);
        envelopes.insert(client_id.clone(), failed(id, &client_id, iteration, err));
    }
    envelopes
}

fn failed(id: &str, client_id: &str, iteration: u32, err: ErrorRecord) -> ResultEnvelope {
    ResultEnvelope::failed(id, client_id, iteration, "none", err)
}

/// Votes, aggregates and reports one iteration. Returns the off-board
/// result as a vector when one was delivered.
async fn complete_iteration(
    state: &Arc<State>,
    id: &str,
    spec: &AssignmentSpec,
    record: &AssignmentRecord,
    iteration: u32,
    envelopes: BTreeMap<String, ResultEnvelope>,
) -> Option<Vec<f64>> {
    let audit = &state.audit;
    let mut errors = BTreeMap::new();
    let mut ok = Vec::new();
    for (client_id, env) in envelopes {
        match env.error {
            Some(err) => {
                audit.record(
                    AuditRecord::new(id, Some(iteration), AuditEvent::ErrorEnvelope)
                        .client(&client_id)
                        .signature(&env.signature),
                );
                errors.insert(client_id, err);
            }
            None => {
                audit.record(
                    AuditRecord::new(id, Some(iteration), AuditEvent::Envelope)
                        .client(&client_id)
                        .signature(&env.signature),
                );
                ok.push(env);
            }
        }
    }

    let deployed = if spec.uses_custom_onboard() {
        state.onboard_signature(&spec.user_id)
    } else {
        Some(builtin_signature(spec.onboard.computation.keyword()))
    };
    let had_results = !ok.is_empty();
    let outcome = majority_filter(ok, deployed.as_deref());
    for env in &outcome.kept {
        audit.record(
            AuditRecord::new(id, Some(iteration), AuditEvent::Kept)
                .client(&env.client_id)
                .signature(&env.signature),
        );
    }
    for env in &outcome.discarded {
        audit.record(
            AuditRecord::new(id, Some(iteration), AuditEvent::Discarded)
                .client(&env.client_id)
                .signature(&env.signature),
        );
    }
    let discarded: Vec<String> = outcome.discarded.iter().map(|e| e.client_id.clone()).collect();

    let publish_status = |st: &str, message: String, errors: BTreeMap<String, ErrorRecord>| {
        let status = AssignmentStatus {
            state: st.into(),
            iteration: Some(iteration),
            message,
            discarded: discarded.clone(),
            errors,
        };
        if let Ok(msg) = Message::with_body(Kind::Status, id, &spec.user_id, &status) {
            record.publish(msg, false);
        }
    };

    let Some(winner) = outcome.winning_signature.clone() else {
        if had_results {
            audit.record(AuditRecord::new(id, Some(iteration), AuditEvent::Inconsistent));
            publish_status(STATE_INCONSISTENT, INCONSISTENT_MESSAGE.into(), errors);
        } else {
            audit.record(AuditRecord::new(id, Some(iteration), AuditEvent::Failed));
            publish_status(
                STATE_FAILED,
                format!("iteration {iteration} failed: no successful client results"),
                errors,
            );
        }
        return None;
    };

    let inputs: Vec<(String, Payload)> = outcome
        .kept
        .into_iter()
        .filter_map(|e| e.payload.map(|p| (e.client_id, p)))
        .collect();
    let kept: Vec<String> = inputs.iter().map(|(c, _)| c.clone()).collect();
    let computed = {
        let state = state.clone();
        let user = spec.user_id.clone();
        let computation = spec.offboard.computation;
        let inputs = inputs.clone();
        tokio::task::spawn_blocking(move || {
            let ctx = OffboardContext {
                user_id: &user,
                iteration,
                store: &state.store,
                sandbox: state.config.sandbox.as_ref(),
                timeout: state.config.exec_timeout,
            };
            offboard_compute(computation, &inputs, &ctx)
        })
        .await
    };
    let (payload, offboard_signature) = match computed {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => {
            audit.record(AuditRecord::new(id, Some(iteration), AuditEvent::Failed).signature(&winner));
            let mut errors = errors;
            errors.insert(BRIDGE_ID.into(), ErrorRecord::new(e.reason(), e.to_string()));
            publish_status(STATE_FAILED, format!("off-board computation failed: {e}"), errors);
            return None;
        }
        Err(e) => {
            audit.record(AuditRecord::new(id, Some(iteration), AuditEvent::Failed).signature(&winner));
            publish_status(STATE_FAILED, format!("off-board computation panicked: {e}"), errors);
            return None;
        }
    };

    audit.record(AuditRecord::new(id, Some(iteration), AuditEvent::Delivered).signature(&winner));
    let model = payload.as_vector();
    let result = IterationResult {
        client_id: BRIDGE_ID.into(),
        iteration,
        signature: winner,
        offboard_signature,
        payload,
        kept,
        discarded,
        errors,
    };
    match Message::with_body(Kind::Result, id, &spec.user_id, &result) {
        Ok(msg) => record.publish(msg, false),
        Err(e) => log::error!("{id}: cannot encode iteration {iteration}: {e}"),
    }
    model
}
