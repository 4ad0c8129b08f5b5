//! The bridge: central server between analysts and the client fleet.
//!
//! One listener serves both roles. A connection whose first message is an
//! `ack` with a client hello is a client; anything else is an analyst
//! session. Every accepted assignment runs as its own task
//! ([`handler`]), talking to clients through the shared registry.

mod deploy;
mod handler;
mod majority;
mod offboard;

pub use majority::{majority_filter, MajorityOutcome};
pub use offboard::{average, collect, custom_input, offboard_compute, OffboardContext, OffboardError};

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::Value;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

use crate::audit::AuditLog;
use crate::codeswap::{CodeStore, Sandbox, StoreError, Target};
use crate::net::{spawn_writer, Outbox, ProcessInfo};
use crate::prng::{fnv1a, mix_seed};
use crate::protocol::{
    BridgeHello, ClientHello, NodeInfo, NodesReport, REQ_NODES, REQ_RESULTS, REQ_WATCH,
    STATE_FINISHED, STATE_RUNNING,
};
use crate::spec::{select_clients, validate_assignment, AssignmentSpec};
use crate::wire::{read_message, Kind, Message, WireError, ANY_ASSIGNMENT};

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub listen: SocketAddr,
    /// Off-board code store directory; in memory when `None`.
    pub store_dir: Option<PathBuf>,
    pub audit_path: Option<PathBuf>,
    /// Factor by which clients compress nominal sampling time.
    pub time_scale: f64,
    /// Extra time a client gets beyond the nominal task duration before its
    /// slot is counted as an error.
    pub client_grace: Duration,
    /// Timeout for off-board custom code.
    pub exec_timeout: Duration,
    /// How long an on-board deployment waits for client acks.
    pub deploy_timeout: Duration,
    pub sandbox: Option<Sandbox>,
    /// Seed for `random:N` client selection.
    pub selection_seed: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 0)),
            store_dir: None,
            audit_path: None,
            time_scale: 1000.0,
            client_grace: Duration::from_secs(30),
            exec_timeout: Duration::from_secs(10),
            deploy_timeout: Duration::from_secs(15),
            sandbox: None,
            selection_seed: 0,
        }
    }
}

/// A message routed from a client connection to the task waiting on it.
#[derive(Debug)]
pub(crate) enum Routed {
    Reply { client_id: String, msg: Message },
    Gone { client_id: String },
}

struct ClientEntry {
    model: String,
    process: ProcessInfo,
    outbox: Outbox,
    conn: u64,
}

/// Delivered results and statuses of one assignment, plus live watchers.
pub(crate) struct AssignmentRecord {
    user_id: String,
    inner: Mutex<RecordInner>,
}

#[derive(Default)]
struct RecordInner {
    log: Vec<Message>,
    finished: bool,
    watchers: Vec<Outbox>,
}

impl AssignmentRecord {
    fn new(user_id: &str) -> Self {
        Self {
            user_id: user_id.to_owned(),
            inner: Mutex::new(RecordInner::default()),
        }
    }

    pub(crate) fn publish(&self, msg: Message, last: bool) {
        let mut inner = self.inner.lock().unwrap();
        inner.watchers.retain(|w| w.send(msg.clone()).is_ok());
        inner.log.push(msg);
        if last {
            inner.finished = true;
            inner.watchers.clear();
        }
    }

    fn watch(&self, outbox: &Outbox) {
        let mut inner = self.inner.lock().unwrap();
        for m in &inner.log {
            if outbox.send(m.clone()).is_err() {
                return;
            }
        }
        if !inner.finished {
            inner.watchers.push(outbox.clone());
        }
    }

    fn results(&self) -> (bool, Vec<Value>) {
        let inner = self.inner.lock().unwrap();
        let results = inner
            .log
            .iter()
            .filter(|m| m.kind == Kind::Result)
            .map(|m| Value::Object(m.body.clone()))
            .collect();
        (inner.finished, results)
    }
}

pub(crate) struct State {
    config: BridgeConfig,
    store: CodeStore,
    audit: AuditLog,
    clients: Mutex<BTreeMap<String, ClientEntry>>,
    routes: Mutex<HashMap<String, mpsc::UnboundedSender<Routed>>>,
    assignments: Mutex<HashMap<String, Arc<AssignmentRecord>>>,
    counters: Mutex<HashMap<String, u64>>,
    deploy_seq: AtomicU64,
    conn_seq: AtomicU64,
    /// Signature of each user's latest on-board deployment; breaks ties in
    /// the per-iteration vote.
    onboard_signatures: Mutex<HashMap<String, String>>,
}

impl State {
    fn registry(&self) -> Vec<(String, String)> {
        self.clients
            .lock()
            .unwrap()
            .iter()
            .map(|(id, e)| (id.clone(), e.model.clone()))
            .collect()
    }

    pub(crate) fn outbox(&self, client_id: &str) -> Option<Outbox> {
        self.clients.lock().unwrap().get(client_id).map(|e| e.outbox.clone())
    }

    pub(crate) fn open_route(&self, id: &str) -> mpsc::UnboundedReceiver<Routed> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.routes.lock().unwrap().insert(id.to_owned(), tx);
        rx
    }

    pub(crate) fn close_route(&self, id: &str) {
        self.routes.lock().unwrap().remove(id);
    }

    fn route(&self, id: &str, item: Routed) {
        if let Some(tx) = self.routes.lock().unwrap().get(id) {
            let _ = tx.send(item);
        }
    }

    fn broadcast_gone(&self, client_id: &str) {
        for tx in self.routes.lock().unwrap().values() {
            let _ = tx.send(Routed::Gone {
                client_id: client_id.to_owned(),
            });
        }
    }

    pub(crate) fn onboard_signature(&self, user_id: &str) -> Option<String> {
        self.onboard_signatures.lock().unwrap().get(user_id).cloned()
    }

    fn next_assignment_id(&self, user_id: &str) -> String {
        let mut counters = self.counters.lock().unwrap();
        let n = counters.entry(user_id.to_owned()).or_default();
        *n += 1;
        format!("{user_id}-{n}")
    }
}

pub struct Bridge {
    state: Arc<State>,
    listener: TcpListener,
}

impl Bridge {
    pub async fn bind(config: BridgeConfig) -> anyhow::Result<Self> {
        let store = match &config.store_dir {
            Some(dir) => CodeStore::open(dir)?,
            None => CodeStore::in_memory(),
        };
        let audit = match &config.audit_path {
            Some(p) => AuditLog::open(p)?,
            None => AuditLog::disabled(),
        };
        let listener = TcpListener::bind(config.listen).await?;
        let state = Arc::new(State {
            config,
            store,
            audit,
            clients: Mutex::new(BTreeMap::new()),
            routes: Mutex::new(HashMap::new()),
            assignments: Mutex::new(HashMap::new()),
            counters: Mutex::new(HashMap::new()),
            deploy_seq: AtomicU64::new(0),
            conn_seq: AtomicU64::new(0),
            onboard_signatures: Mutex::new(HashMap::new()),
        });
        Ok(Self { state, listener })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the process ends.
    pub async fn run(self) -> anyhow::Result<()> {
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let _ = stream.set_nodelay(true);
            let state = self.state.clone();
            tokio::spawn(async move {
                if let Err(e) = serve_connection(state, stream).await {
                    log::debug!("connection {peer}: {e}");
                }
            });
        }
    }
}

/// Binds, prints `listening on ADDR` on stdout and serves forever.
pub async fn serve(config: BridgeConfig) -> anyhow::Result<()> {
    let bridge = Bridge::bind(config).await?;
    let addr = bridge.local_addr()?;
    println!("listening on {addr}");
    std::io::stdout().flush()?;
    log::info!("bridge listening on {addr}");
    bridge.run().await
}

async fn serve_connection(state: Arc<State>, stream: TcpStream) -> Result<(), WireError> {
    let (mut reader, writer) = stream.into_split();
    let outbox = spawn_writer(writer);
    let Some(first) = read_message(&mut reader).await? else {
        return Ok(());
    };
    if first.kind == Kind::Ack && first.str_field("role") == Some("client") {
        return serve_client(state, first, reader, outbox).await;
    }

    let mut next = Some(first);
    loop {
        let msg = match next.take() {
            Some(m) => m,
            None => match read_message(&mut reader).await {
                Ok(Some(m)) => m,
                Ok(None) => return Ok(()),
                Err(e @ (WireError::Protocol { .. } | WireError::Json(_))) => {
                    let _ = outbox.send(Message::error("", "", e.to_string()));
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        handle_analyst(&state, msg, &outbox).await;
    }
}

async fn serve_client(
    state: Arc<State>,
    hello: Message,
    mut reader: tokio::net::tcp::OwnedReadHalf,
    outbox: Outbox,
) -> Result<(), WireError> {
    let hello: ClientHello = hello.body_as()?;
    let conn = state.conn_seq.fetch_add(1, Ordering::Relaxed);
    let client_id = hello.client_id.clone();
    {
        let mut clients = state.clients.lock().unwrap();
        if clients.contains_key(&client_id) {
            log::warn!("client {client_id} re-registered; replacing previous connection");
        }
        clients.insert(
            client_id.clone(),
            ClientEntry {
                model: hello.model.clone(),
                process: hello.process.clone(),
                outbox: outbox.clone(),
                conn,
            },
        );
    }
    log::info!("client {client_id} ({}) registered", hello.model);
    let reply = Message::with_body(
        Kind::Ack,
        ANY_ASSIGNMENT,
        ANY_ASSIGNMENT,
        &BridgeHello {
            role: "bridge".into(),
            process: ProcessInfo::current().clone(),
        },
    )?;
    let _ = outbox.send(reply);

    let result = loop {
        match read_message(&mut reader).await {
            Ok(Some(msg)) => {
                let id = msg.assignment_id.clone();
                state.route(
                    &id,
                    Routed::Reply {
                        client_id: client_id.clone(),
                        msg,
                    },
                );
            }
            Ok(None) => break Ok(()),
            Err(e @ (WireError::Protocol { .. } | WireError::Json(_))) => {
                log::warn!("client {client_id} sent a bad message: {e}");
            }
            Err(e) => break Err(e),
        }
    };

    {
        let mut clients = state.clients.lock().unwrap();
        if clients.get(&client_id).is_some_and(|e| e.conn == conn) {
            clients.remove(&client_id);
        }
    }
    log::info!("client {client_id} disconnected");
    state.broadcast_gone(&client_id);
    result
}

async fn handle_analyst(state: &Arc<State>, msg: Message, outbox: &Outbox) {
    let reply = match msg.kind {
        Kind::Assignment => Some(match handle_assignment(state, &msg) {
            Ok((id, clients)) => Message::new(Kind::Ack, id.clone(), msg.user_id.clone())
                .with("assignment_id", id)
                .with("clients", clients),
            Err(text) => Message::error(&msg.assignment_id, &msg.user_id, text),
        }),
        Kind::DeployCode => Some(deploy::handle_deploy(state, &msg).await),
        Kind::Status => match msg.str_field("request") {
            Some(REQ_WATCH) => {
                let record = owned_assignment(state, &msg);
                match record {
                    Some(r) => {
                        r.watch(outbox);
                        None
                    }
                    None => Some(unknown_assignment(&msg)),
                }
            }
            Some(REQ_RESULTS) => {
                let record = owned_assignment(state, &msg);
                Some(match record {
                    Some(r) => {
                        let (finished, results) = r.results();
                        let st = if finished { STATE_FINISHED } else { STATE_RUNNING };
                        Message::new(Kind::Status, msg.assignment_id.clone(), r.user_id.clone())
                            .with("state", st)
                            .with("results", results)
                    }
                    None => unknown_assignment(&msg),
                })
            }
            Some(REQ_NODES) => Some(nodes_report(state, &msg)),
            other => Some(Message::error(
                &msg.assignment_id,
                &msg.user_id,
                format!("unsupported status request {other:?}"),
            )),
        },
        other => Some(Message::error(
            &msg.assignment_id,
            &msg.user_id,
            format!("unexpected {other} message from an analyst session"),
        )),
    };
    if let Some(r) = reply {
        let _ = outbox.send(r);
    }
}

/// Analysts only see their own assignments; anyone else's look unknown.
fn owned_assignment(state: &State, msg: &Message) -> Option<Arc<AssignmentRecord>> {
    state
        .assignments
        .lock()
        .unwrap()
        .get(&msg.assignment_id)
        .filter(|r| r.user_id == msg.user_id)
        .cloned()
}

fn unknown_assignment(msg: &Message) -> Message {
    Message::error(
        &msg.assignment_id,
        &msg.user_id,
        format!("unknown assignment {}", msg.assignment_id),
    )
}

fn nodes_report(state: &State, msg: &Message) -> Message {
    let clients = state
        .clients
        .lock()
        .unwrap()
        .iter()
        .map(|(id, e)| NodeInfo {
            client_id: id.clone(),
            model: e.model.clone(),
            process: e.process.clone(),
        })
        .collect();
    let report = NodesReport {
        state: "ok".into(),
        bridge: ProcessInfo::current().clone(),
        clients,
    };
    Message::with_body(Kind::Status, ANY_ASSIGNMENT, msg.user_id.clone(), &report)
        .unwrap_or_else(|e| Message::error("", &msg.user_id, e.to_string()))
}

/// Validates and starts an assignment. Returns its id and resolved clients.
fn handle_assignment(state: &Arc<State>, msg: &Message) -> Result<(String, Vec<String>), String> {
    let doc = msg.body.get("spec").cloned().unwrap_or(Value::Null);
    let spec: AssignmentSpec = validate_assignment(&doc).map_err(|v| {
        let list: Vec<String> = v.iter().map(ToString::to_string).collect();
        format!("invalid assignment: {}", list.join("; "))
    })?;
    if spec.user_id != msg.user_id {
        return Err(format!(
            "assignment user {} does not match session user {}",
            spec.user_id, msg.user_id
        ));
    }
    if spec.uses_custom_onboard() && state.onboard_signature(&spec.user_id).is_none() {
        return Err(format!(
            "no on-board custom code deployed for user {}",
            spec.user_id
        ));
    }
    if spec.uses_custom_offboard() {
        match state.store.load_module(&spec.user_id, Target::Offboard) {
            Ok(_) => {}
            Err(StoreError::NotDeployed { .. }) => {
                return Err(format!(
                    "no off-board custom code deployed for user {}",
                    spec.user_id
                ))
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    let seed = mix_seed(&[
        state.config.selection_seed,
        fnv1a(&spec.user_id),
        fnv1a(&spec.name),
    ]);
    let clients = select_clients(&spec.clients, &state.registry(), seed)
        .map_err(|e| format!("client selection failed: {e}"))?;

    let id = state.next_assignment_id(&spec.user_id);
    let record = Arc::new(AssignmentRecord::new(&spec.user_id));
    state
        .assignments
        .lock()
        .unwrap()
        .insert(id.clone(), record.clone());
    let rx = state.open_route(&id);
    log::info!("assignment {id} accepted for {} clients", clients.len());
    tokio::spawn(handler::run(state.clone(), id.clone(), spec, clients.clone(), record, rx));
    Ok((id, clients))
}

