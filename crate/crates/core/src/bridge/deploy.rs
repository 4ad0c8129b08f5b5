//! Code deployment from analysts: off-board modules are stored here,
//! on-board modules are forwarded to the selected clients.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use tokio::time::{timeout_at, Instant};

use super::{Routed, State};
use crate::audit::{AuditEvent, AuditRecord};
use crate::codeswap::{validate_custom, CustomModule, Target, ValidationOptions};
use crate::protocol::{DeployReport, BRIDGE_ID, STATE_DEPLOYED, STATE_FAILED, STATE_PARTIAL};
use crate::spec::{select_clients, ClientSelector};
use crate::wire::{decode_custom_code, encode_custom_code, Kind, Message, ANY_ASSIGNMENT};

pub(crate) async fn handle_deploy(state: &Arc<State>, msg: &Message) -> Message {
    let reject = |text: String| Message::error(&msg.assignment_id, &msg.user_id, text);
    let Some(target) = msg.str_field("mode").and_then(Target::from_deploy_mode) else {
        return reject("deploy_code needs mode deploy_onboard or deploy_offboard".into());
    };
    let source = match msg.str_field("custom_code").map(decode_custom_code) {
        Some(Ok(s)) => s,
        Some(Err(e)) => return reject(e.to_string()),
        None => return reject("deploy_code without custom_code".into()),
    };

    let report = {
        let source = source.clone();
        tokio::task::spawn_blocking(move || validate_custom(&source, target, &ValidationOptions::default()))
            .await
    };
    match report {
        Ok(r) if r.ok => {}
        Ok(r) => {
            return reject(format!("validation failed at the bridge: {}", r.summary()))
                .with("stage", r.stage.as_str())
        }
        Err(e) => return reject(format!("validation aborted: {e}")),
    }

    let module = CustomModule::new(source, msg.user_id.clone(), target);
    let signature = module.signature.clone();
    match target {
        Target::Offboard => {
            if let Err(e) = state.store.store_module(module) {
                return reject(format!("storing off-board module failed: {e}"));
            }
            state.audit.record(
                AuditRecord::new(ANY_ASSIGNMENT, None, AuditEvent::Deploy)
                    .signature(&signature)
                    .client(BRIDGE_ID),
            );
            let report = DeployReport {
                state: STATE_DEPLOYED.into(),
                target: target.as_str().into(),
                signature,
                acked: vec![BRIDGE_ID.into()],
                failed: BTreeMap::new(),
            };
            Message::with_body(Kind::Status, ANY_ASSIGNMENT, msg.user_id.clone(), &report)
                .unwrap_or_else(|e| reject(e.to_string()))
        }
        Target::Onboard => deploy_onboard(state, msg, module).await,
    }
}

async fn deploy_onboard(state: &Arc<State>, msg: &Message, module: CustomModule) -> Message {
    let reject = |text: String| Message::error(&msg.assignment_id, &msg.user_id, text);
    let selector = match msg.body.get("clients") {
        None => ClientSelector::All,
        Some(v) => match ClientSelector::from_json(v) {
            Ok(s) => s,
            Err(e) => return reject(format!("clients: {e}")),
        },
    };
    // Explicit ids are taken as given so that a dead client shows up as a
    // per-client failure instead of failing the whole deployment.
    let targets = match &selector {
        ClientSelector::Ids(ids) => {
            let mut ids = ids.clone();
            ids.sort();
            ids.dedup();
            ids
        }
        other => match select_clients(other, &state.registry(), rand::random()) {
            Ok(t) => t,
            Err(e) => return reject(format!("client selection failed: {e}")),
        },
    };

    let user = msg.user_id.clone();
    let signature = module.signature.clone();
    state
        .onboard_signatures
        .lock()
        .unwrap()
        .insert(user.clone(), signature.clone());

    let deploy_id = format!(
        "{user}-deploy-{}",
        state.deploy_seq.fetch_add(1, Ordering::Relaxed) + 1
    );
    let mut rx = state.open_route(&deploy_id);
    let forward = Message::new(Kind::DeployCode, deploy_id.clone(), user.clone())
        .with("mode", Target::Onboard.deploy_mode())
        .with("custom_code", encode_custom_code(&module.source));

    let mut failed = BTreeMap::new();
    let mut waiting = std::collections::BTreeSet::new();
    for c in &targets {
        match state.outbox(c) {
            Some(out) if out.send(forward.clone()).is_ok() => {
                waiting.insert(c.clone());
            }
            _ => {
                failed.insert(c.clone(), "client not connected".to_owned());
            }
        }
    }

    let mut acked = Vec::new();
    let deadline = Instant::now() + state.config.deploy_timeout;
    while !waiting.is_empty() {
        let item = match timeout_at(deadline, rx.recv()).await {
            Ok(Some(item)) => item,
            Ok(None) | Err(_) => break,
        };
        match item {
            Routed::Reply { client_id, msg: reply } => {
                if !waiting.remove(&client_id) {
                    continue;
                }
                match reply.kind {
                    Kind::Ack if reply.str_field("signature") == Some(signature.as_str()) => {
                        state.audit.record(
                            AuditRecord::new(&deploy_id, None, AuditEvent::Deploy)
                                .client(&client_id)
                                .signature(&signature),
                        );
                        acked.push(client_id);
                    }
                    Kind::Ack => {
                        failed.insert(client_id, "ack carried a different signature".into());
                    }
                    _ => {
                        let text = reply.str_field("message").unwrap_or("deployment failed");
                        failed.insert(client_id, text.to_owned());
                    }
                }
            }
            Routed::Gone { client_id } => {
                if waiting.remove(&client_id) {
                    failed.insert(client_id, "client disconnected".into());
                }
            }
        }
    }
    state.close_route(&deploy_id);
    for c in waiting {
        failed.insert(
            c,
            format!("no acknowledgement within {:?}", state.config.deploy_timeout),
        );
    }

    acked.sort();
    let st = if failed.is_empty() {
        STATE_DEPLOYED
    } else if acked.is_empty() {
        STATE_FAILED
    } else {
        STATE_PARTIAL
    };
    let report = DeployReport {
        state: st.into(),
        target: Target::Onboard.as_str().into(),
        signature,
        acked,
        failed,
    };
    Message::with_body(Kind::Status, deploy_id, user, &report).unwrap_or_else(|e| reject(e.to_string()))
}
