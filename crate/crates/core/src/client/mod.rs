//! Client node: one connection to the bridge, one task handler per task.

mod task;

pub use task::{collect_samples, onboard_compute, CollectError, ComputeContext};

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::Mutex as AsyncMutex;

use crate::codeswap::{validate_custom, CodeStore, CustomModule, Sandbox, Target, ValidationOptions};
use crate::envelope::{builtin_signature, ErrorRecord, ResultEnvelope};
use crate::net::{connect, spawn_writer, Outbox, ProcessInfo};
use crate::protocol::{BridgeHello, ClientHello};
use crate::sensors::{task_stream_seed, Catalog};
use crate::spec::{parse_filter, OnboardComputation, TaskSpec};
use crate::wire::{decode_custom_code, read_message, Kind, Message, ANY_ASSIGNMENT};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub client_id: String,
    pub model: String,
    pub bridge: SocketAddr,
    /// Fixes the simulated sensor data.
    pub seed: u64,
    pub store_dir: PathBuf,
    /// Timeout for on-board custom code.
    pub exec_timeout: Duration,
    /// Factor by which nominal sampling intervals are compressed.
    pub time_scale: f64,
    /// Wall-clock limit for collecting one task's samples. Defaults to twice
    /// the compressed nominal duration plus five seconds.
    pub collect_cap: Option<Duration>,
    pub catalog: Catalog,
    pub sandbox: Sandbox,
    /// How long to keep retrying the initial connection.
    pub connect_retry: Duration,
}

impl ClientConfig {
    pub fn new(client_id: &str, model: &str, bridge: SocketAddr, store_dir: PathBuf, sandbox: Sandbox) -> Self {
        Self {
            client_id: client_id.to_owned(),
            model: model.to_owned(),
            bridge,
            seed: 0,
            store_dir,
            exec_timeout: Duration::from_secs(10),
            time_scale: 1000.0,
            collect_cap: None,
            catalog: Catalog::default(),
            sandbox,
            connect_retry: Duration::from_secs(10),
        }
    }

    fn sample_interval(&self, frequency: u32) -> Duration {
        Duration::from_secs_f64(1.0 / f64::from(frequency.max(1)) / self.time_scale.max(1e-9))
    }

    fn cap_for(&self, nominal_seconds: f64) -> Duration {
        self.collect_cap.unwrap_or_else(|| {
            Duration::from_secs_f64(2.0 * nominal_seconds / self.time_scale.max(1e-9)) + Duration::from_secs(5)
        })
    }
}

struct Node {
    config: ClientConfig,
    store: Arc<CodeStore>,
    /// Deployments are applied one at a time, in arrival order.
    deploy_lock: AsyncMutex<()>,
}

/// Connects to the bridge and serves tasks until the bridge goes away.
pub async fn run_client(config: ClientConfig) -> anyhow::Result<()> {
    let store = Arc::new(CodeStore::open(&config.store_dir)?);
    let stream = connect_with_retry(config.bridge, config.connect_retry).await?;
    let (mut reader, writer) = stream.into_split();
    let outbox = spawn_writer(writer);

    let hello = ClientHello {
        role: "client".into(),
        client_id: config.client_id.clone(),
        model: config.model.clone(),
        process: ProcessInfo::current().clone(),
    };
    outbox.send(Message::with_body(Kind::Ack, ANY_ASSIGNMENT, ANY_ASSIGNMENT, &hello)?)?;
    match read_message(&mut reader).await? {
        Some(m) if m.kind == Kind::Ack => {
            let bridge: BridgeHello = m.body_as()?;
            log::info!("{} registered with bridge pid {}", config.client_id, bridge.process.pid);
        }
        Some(m) => anyhow::bail!("unexpected handshake reply: {}", m.kind),
        None => anyhow::bail!("bridge closed the connection during the handshake"),
    }

    let node = Arc::new(Node {
        config,
        store,
        deploy_lock: AsyncMutex::new(()),
    });
    loop {
        let msg = match read_message(&mut reader).await {
            Ok(Some(m)) => m,
            Ok(None) => {
                log::info!("bridge closed the connection");
                return Ok(());
            }
            Err(e @ (crate::wire::WireError::Protocol { .. } | crate::wire::WireError::Json(_))) => {
                log::warn!("bad message from bridge: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match msg.kind {
            Kind::Task => {
                tokio::spawn(handle_task(node.clone(), msg, outbox.clone()));
            }
            Kind::DeployCode => {
                let node = node.clone();
                let outbox = outbox.clone();
                tokio::spawn(async move {
                    let _guard = node.deploy_lock.lock().await;
                    let reply = {
                        let node = node.clone();
                        tokio::task::spawn_blocking(move || {
                            handle_client_deploy(&msg, &node.store, &node.config.client_id)
                        })
                        .await
                    };
                    if let Ok(reply) = reply {
                        let _ = outbox.send(reply);
                    }
                });
            }
            other => log::debug!("ignoring {other} message"),
        }
    }
}

async fn connect_with_retry(addr: SocketAddr, patience: Duration) -> std::io::Result<tokio::net::TcpStream> {
    let deadline = tokio::time::Instant::now() + patience;
    loop {
        match connect(addr).await {
            Ok(s) => return Ok(s),
            Err(e) if tokio::time::Instant::now() >= deadline => return Err(e),
            Err(_) => tokio::time::sleep(Duration::from_millis(20)).await,
        }
    }
}

async fn handle_task(node: Arc<Node>, msg: Message, outbox: Outbox) {
    let user = msg.user_id.clone();
    let aid = msg.assignment_id.clone();
    let envelope = match msg.body_as::<TaskSpec>() {
        Ok(mut task) => {
            task.assignment_id = aid.clone();
            task.user_id = user.clone();
            handle_parsed_task(&node, task).await
        }
        Err(e) => {
            let client_id = node.config.client_id.clone();
            let iteration = msg.body.get("iteration").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
            ResultEnvelope::failed(&aid, &client_id, iteration, "none", ErrorRecord::new("protocol", e.to_string()))
        }
    };
    match Message::with_body(Kind::Result, aid, user, &envelope) {
        Ok(m) => {
            let _ = outbox.send(m);
        }
        Err(e) => log::error!("cannot encode result: {e}"),
    }
}

/// Runs one task to completion: open the stream, collect, compute.
async fn handle_parsed_task(node: &Node, task: TaskSpec) -> ResultEnvelope {
    let cfg = &node.config;
    let signal = task.onboard.signal().to_owned();
    let sig = if task.onboard.computation == OnboardComputation::Custom {
        "none".to_owned()
    } else {
        builtin_signature(task.onboard.computation.keyword())
    };
    let fail = |reason: &str, message: String| {
        ResultEnvelope::failed(&task.assignment_id, &task.client_id, task.iteration, sig.clone(), ErrorRecord::new(reason, message))
    };

    let seed = task_stream_seed(cfg.seed, &signal, task.iteration);
    let mut stream = match cfg.catalog.open_stream(&signal, seed) {
        Ok(s) => s,
        Err(e) => return fail("unknown_signal", e.to_string()),
    };
    let filter = match task.onboard.filters.as_deref().map(parse_filter) {
        None => None,
        Some(Ok(f)) => Some(f),
        Some(Err(e)) => return fail("filter", e.to_string()),
    };
    let interval = cfg.sample_interval(task.onboard.frequency);
    let cap = cfg.cap_for(task.onboard.nominal_seconds());
    let buffer = match collect_samples(&mut stream, filter.as_ref(), task.onboard.samples, interval, cap).await {
        Ok(b) => b,
        Err(e) => return fail("partial", e.to_string()),
    };

    let store = node.store.clone();
    let sandbox = cfg.sandbox.clone();
    let timeout = cfg.exec_timeout;
    let task2 = task.clone();
    tokio::task::spawn_blocking(move || {
        let ctx = ComputeContext {
            store: &store,
            sandbox: &sandbox,
            timeout,
        };
        onboard_compute(&task2, &buffer, &ctx)
    })
    .await
    .unwrap_or_else(|e| fail("fault", format!("computation panicked: {e}")))
}

/// Validates and stores an on-board module sent by the bridge; replies with
/// an ack carrying the signature or an error naming the failed stage.
pub fn handle_client_deploy(msg: &Message, store: &CodeStore, client_id: &str) -> Message {
    let error = |text: String| {
        Message::error(&msg.assignment_id, &msg.user_id, text).with("client_id", client_id)
    };
    if msg.str_field("mode").and_then(Target::from_deploy_mode) != Some(Target::Onboard) {
        return error("clients only accept deploy_onboard".into());
    }
    let source = match msg.str_field("custom_code").map(decode_custom_code) {
        Some(Ok(s)) => s,
        Some(Err(e)) => return error(e.to_string()),
        None => return error("missing custom_code".into()),
    };
    let report = validate_custom(&source, Target::Onboard, &ValidationOptions::default());
    if !report.ok {
        return error(format!("validation failed at {client_id}: {}", report.summary()))
            .with("stage", report.stage.as_str());
    }
    let module = CustomModule::new(source, msg.user_id.clone(), Target::Onboard);
    let signature = module.signature.clone();
    if let Err(e) = store.store_module(module) {
        return error(format!("update failed at {client_id}: {e}"));
    }
    log::info!("{client_id}: on-board module for {} is now {signature}", msg.user_id);
    Message::new(Kind::Ack, msg.assignment_id.clone(), msg.user_id.clone())
        .with("client_id", client_id)
        .with("signature", signature)
}
