//! Analyst front-end: local validation, deployment, submission, watching and
//! result retrieval.
//!
//! Exit codes of the `cmd_*` functions: 0 success, 1 domain rejection, 2 I/O
//! or parse failure.

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::codeswap::{validate_custom, Target, ValidationOptions, ValidationReport};
use crate::net::Session;
use crate::protocol::{
    AssignmentStatus, DeployReport, IterationResult, NodesReport, REQ_NODES, REQ_RESULTS,
    REQ_WATCH, STATE_DEPLOYED, STATE_FINISHED,
};
use crate::spec::{validate_assignment, ClientSelector};
use crate::wire::{encode_custom_code, Kind, Message, WireError, ANY_ASSIGNMENT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_IO: i32 = 2;

pub const DEFAULT_BRIDGE: &str = "127.0.0.1:7878";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Rejected(String),
    #[error("local validation failed: {}", .0.summary())]
    Invalid(ValidationReport),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Rejected(_) | CliError::Invalid(_) => EXIT_REJECTED,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<WireError> for CliError {
    fn from(e: WireError) -> Self {
        CliError::Io(format!("bridge connection: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// One line of a watched assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum WatchEvent {
    Result(IterationResult),
    Status(AssignmentStatus),
}

impl WatchEvent {
    pub fn is_finished(&self) -> bool {
        matches!(self, WatchEvent::Status(s) if s.state == STATE_FINISHED)
    }

    pub fn line(&self) -> String {
        match self {
            WatchEvent::Result(r) => format!(
                "iteration {} signature {} kept {} discarded {} payload {}",
                r.iteration,
                r.signature,
                r.kept.len(),
                r.discarded.len(),
                serde_json::to_string(&r.payload).unwrap_or_default()
            ),
            WatchEvent::Status(s) if s.state == STATE_FINISHED => STATE_FINISHED.to_owned(),
            WatchEvent::Status(s) => {
                let mut line = match s.iteration {
                    Some(i) => format!("iteration {i}: {}", s.message),
                    None => s.message.clone(),
                };
                for (client, err) in &s.errors {
                    let _ = write!(line, " [{client}: {}]", err.message);
                }
                line
            }
        }
    }
}

/// A connection target plus the analyst's user id.
#[derive(Debug, Clone)]
pub struct Analyst {
    pub bridge: SocketAddr,
    pub user: String,
    /// Limit for request/response exchanges. Watching has no limit.
    pub timeout: Duration,
}

impl Analyst {
    pub fn new(bridge: SocketAddr, user: &str) -> Self {
        Self {
            bridge,
            user: user.to_owned(),
            timeout: Duration::from_secs(60),
        }
    }

    async fn session(&self) -> Result<Session, CliError> {
        Session::open(self.bridge)
            .await
            .map_err(|e| CliError::Io(format!("cannot reach bridge at {}: {e}", self.bridge)))
    }

    async fn request(&self, msg: Message) -> Result<Message, CliError> {
        let mut s = self.session().await?;
        let reply = s.request(&msg, self.timeout).await?;
        if reply.kind == Kind::Error {
            return Err(CliError::Rejected(
                reply.str_field("message").unwrap_or("rejected").to_owned(),
            ));
        }
        Ok(reply)
    }

    /// Validates locally, then deploys. Nothing is sent if validation fails.
    pub async fn deploy(&self, target: Target, source: &str, clients: &ClientSelector) -> Result<DeployReport, CliError> {
        let report = validate_custom(source, target, &ValidationOptions::default());
        if !report.ok {
            return Err(CliError::Invalid(report));
        }
        let mut msg = Message::new(Kind::DeployCode, ANY_ASSIGNMENT, self.user.clone())
            .with("mode", target.deploy_mode())
            .with("custom_code", encode_custom_code(source));
        if target == Target::Onboard {
            msg = msg.with("clients", clients.to_json());
        }
        let reply = self.request(msg).await?;
        Ok(reply.body_as()?)
    }

    /// Validates locally and submits. Fills in `user_id` when the document
    /// leaves it out. Returns the assignment id and its clients.
    pub async fn submit(&self, doc: &Value) -> Result<(String, Vec<String>), CliError> {
        let mut doc = doc.clone();
        if let Value::Object(m) = &mut doc {
            m.entry("user_id").or_insert_with(|| Value::from(self.user.clone()));
        }
        let spec = validate_assignment(&doc).map_err(|v| {
            let list: Vec<String> = v.iter().map(ToString::to_string).collect();
            CliError::Rejected(format!("invalid assignment: {}", list.join("; ")))
        })?;
        if spec.user_id != self.user {
            return Err(CliError::Rejected(format!(
                "assignment belongs to {}, not {}",
                spec.user_id, self.user
            )));
        }
        let msg = Message::new(Kind::Assignment, spec.name.clone(), self.user.clone()).with("spec", doc);
        let reply = self.request(msg).await?;
        let id = reply
            .str_field("assignment_id")
            .map(str::to_owned)
            .unwrap_or(reply.assignment_id);
        let clients = reply
            .body
            .get("clients")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        Ok((id, clients))
    }

    /// Streams an assignment's events to `on_event` until it finishes.
    pub async fn watch<F: FnMut(&WatchEvent)>(&self, assignment_id: &str, mut on_event: F) -> Result<Vec<WatchEvent>, CliError> {
        let mut s = self.session().await?;
        s.send(&Message::new(Kind::Status, assignment_id, self.user.clone()).with("request", REQ_WATCH))
            .await?;
        let mut events = Vec::new();
        loop {
            let msg = s.recv().await?;
            let event = match msg.kind {
                Kind::Result => WatchEvent::Result(msg.body_as()?),
                Kind::Status => WatchEvent::Status(msg.body_as()?),
                Kind::Error => {
                    return Err(CliError::Rejected(
                        msg.str_field("message").unwrap_or("watch failed").to_owned(),
                    ))
                }
                _ => continue,
            };
            on_event(&event);
            let done = event.is_finished();
            events.push(event);
            if done {
                return Ok(events);
            }
        }
    }

    /// Delivered iteration results so far and whether the assignment is done.
    pub async fn results(&self, assignment_id: &str) -> Result<(bool, Vec<IterationResult>), CliError> {
        let reply = self
            .request(Message::new(Kind::Status, assignment_id, self.user.clone()).with("request", REQ_RESULTS))
            .await?;
        let finished = reply.str_field("state") == Some(STATE_FINISHED);
        let results = match reply.body.get("results") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Io(e.to_string()))?,
            None => Vec::new(),
        };
        Ok((finished, results))
    }

    pub async fn nodes(&self) -> Result<NodesReport, CliError> {
        let reply = self
            .request(Message::new(Kind::Status, ANY_ASSIGNMENT, self.user.clone()).with("request", REQ_NODES))
            .await?;
        Ok(reply.body_as()?)
    }
}

/// Parses `250ms`, `10s` or a plain number of seconds.
pub fn parse_duration(text: &str) -> Result<Duration, String> {
    let t = text.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("ms") {
        (n, 1e-3)
    } else if let Some(n) = t.strip_suffix('s') {
        (n, 1.0)
    } else {
        (t, 1.0)
    };
    match num.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(Duration::from_secs_f64(v * scale)),
        _ => Err(format!("invalid duration {text:?}; use e.g. 250ms or 10s")),
    }
}

/// Reads a JSON document, reporting parse errors with their byte offset.
pub fn read_json_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        let offset = byte_offset(&text, e.line(), e.column());
        CliError::Io(format!("{}: parse error at offset {offset}: {e}", path.display()))
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + column.saturating_sub(1)
}

fn report_error(e: &CliError) -> i32 {
    match e {
        CliError::Invalid(report) => {
            eprintln!("rejected locally, nothing sent");
            for (stage, msg) in &report.violations {
                eprintln!("  {stage}: {msg}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    e.exit_code()
}

pub fn cmd_validate(spec_file: &Path) -> i32 {
    let doc = match read_json_file(spec_file) {
        Ok(d) => d,
        Err(e) => return report_error(&e),
    };
    match validate_assignment(&doc) {
        Ok(_) => {
            println!("valid");
            EXIT_OK
        }
        Err(violations) => {
            for v in violations {
                println!("{v}");
            }
            EXIT_REJECTED
        }
    }
}

pub async fn cmd_deploy(analyst: &Analyst, target: Target, code_file: &Path, clients: &ClientSelector) -> i32 {
    let source = match std::fs::read_to_string(code_file) {
        Ok(s) => s,
        Err(e) => return report_error(&CliError::Io(format!("{}: {e}", code_file.display()))),
    };
    match analyst.deploy(target, &source, clients).await {
        Ok(report) => {
            println!("signature {}", report.signature);
            for c in &report.acked {
                println!("ack {c}");
            }
            for (c, why) in &report.failed {
                println!("failed {c}: {why}");
            }
            if report.state == STATE_DEPLOYED {
                println!("deployed");
                EXIT_OK
            } else {
                println!("{}: repeat the deployment once the failed clients are back", report.state);
                EXIT_REJECTED
            }
        }
        Err(e) => report_error(&e),
    }
}

pub async fn cmd_submit(analyst: &Analyst, spec_file: &Path) -> i32 {
    let doc = match read_json_file(spec_file) {
        Ok(d) => d,
        Err(e) => return report_error(&e),
    };
    match analyst.submit(&doc).await {
        Ok((id, _)) => {
            println!("{id}");
            EXIT_OK
        }
        Err(e) => report_error(&e),
    }
}

pub async fn cmd_watch(analyst: &Analyst, assignment_id: &str) -> i32 {
    let printed = analyst
        .watch(assignment_id, |ev| {
            println!("{}", ev.line());
            let _ = std::io::stdout().flush();
        })
        .await;
    match printed {
        Ok(_) => EXIT_OK,
        Err(e) => report_error(&e),
    }
}

pub async fn cmd_results(analyst: &Analyst, assignment_id: &str, out_file: &Path) -> i32 {
    let (finished, results) = match analyst.results(assignment_id).await {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let mut text = String::new();
    for r in &results {
        text.push_str(&serde_json::to_string(r).unwrap_or_default());
        text.push('\n');
    }
    if let Err(e) = std::fs::write(out_file, text) {
        return report_error(&CliError::Io(format!("{}: {e}", out_file.display())));
    }
    let st = if finished { "finished" } else { "running" };
    println!("{} results written to {} ({st})", results.len(), out_file.display());
    EXIT_OK
}

pub async fn cmd_nodes(analyst: &Analyst) -> i32 {
    match analyst.nodes().await {
        Ok(report) => {
            println!("bridge pid {} started {}", report.bridge.pid, report.bridge.started_at_ms);
            for c in report.clients {
                println!(
                    "{} model {} pid {} started {}",
                    c.client_id, c.model, c.process.pid, c.process.started_at_ms
                );
            }
            EXIT_OK
        }
        Err(e) => report_error(&e),
    }
}

#[derive(Debug, Parser)]
#[command(name = "fleet", about = "Analyst front-end for the fleet bridge")]
pub struct Args {
    /// Bridge address.
    #[arg(long, global = true)]
    pub bridge: Option<SocketAddr>,
    /// User id; overrides the config file.
    #[arg(long, global = true)]
    pub user: Option<String>,
    /// JSON file with optional `user` and `bridge` fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an assignment file locally.
    Validate { spec_file: PathBuf },
    /// Validate a custom module locally and deploy it.
    Deploy {
        /// onboard or offboard
        target: Target,
        code_file: PathBuf,
        /// all | random:N | ids:c1,c2 | model:NAME (on-board only)
        #[arg(long, default_value = "all")]
        clients: ClientSelector,
    },
    /// Submit an assignment and print its id.
    Submit { spec_file: PathBuf },
    /// Print one line per iteration until the assignment finishes.
    Watch { assignment_id: String },
    /// Write delivered iteration results as JSON lines.
    Results { assignment_id: String, out_file: PathBuf },
    /// List the bridge and registered clients.
    Nodes,
}

#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    user: Option<String>,
    bridge: Option<SocketAddr>,
}

/// Parses arguments and runs the chosen command; returns the exit code.
pub fn main_with_args(args: Args) -> i32 {
    if let Command::Validate { spec_file } = &args.command {
        return cmd_validate(spec_file);
    }
    let config = match &args.config {
        None => ConfigFile::default(),
        Some(p) => match read_json_file(p).and_then(|v| {
            serde_json::from_value::<ConfigFile>(v).map_err(|e| CliError::Io(e.to_string()))
        }) {
            Ok(c) => c,
            Err(e) => return report_error(&e),
        },
    };
    let Some(user) = args.user.or(config.user) else {
        eprintln!("error: no user id; pass --user or set `user` in the config file");
        return EXIT_IO;
    };
    let bridge = args
        .bridge
        .or(config.bridge)
        .unwrap_or_else(|| DEFAULT_BRIDGE.parse().expect("default address"));
    let analyst = Analyst::new(bridge, &user);

    let rt = match tokio::runtime::Builder::new_current_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return report_error(&CliError::Io(e.to_string())),
    };
    rt.block_on(async {
        match &args.command {
            Command::Validate { .. } => unreachable!("handled above"),
            Command::Deploy { target, code_file, clients } => cmd_deploy(&analyst, *target, code_file, clients).await,
            Command::Submit { spec_file } => cmd_submit(&analyst, spec_file).await,
            Command::Watch { assignment_id } => cmd_watch(&analyst, assignment_id).await,
            Command::Results { assignment_id, out_file } => cmd_results(&analyst, assignment_id, out_file).await,
            Command::Nodes => cmd_nodes(&analyst).await,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("250ms"), Ok(Duration::from_millis(250)));
        assert_eq!(parse_duration("10s"), Ok(Duration::from_secs(10)));
        assert_eq!(parse_duration("1.5"), Ok(Duration::from_millis(1500)));
        assert!(parse_duration("-1s").is_err());
        assert!(parse_duration("soon").is_err());
    }

    #[test]
    fn offsets_count_bytes() {
        assert_eq!(byte_offset("{\n  x", 2, 3), 4);
        assert_eq!(byte_offset("abc", 1, 1), 0);
    }

    #[test]
    fn parse_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"name\": ").unwrap();
        let err = read_json_file(&p).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_IO);
        assert!(err.to_string().contains("offset"));
        assert_eq!(cmd_validate(&p), EXIT_IO);
    }

    #[test]
    fn missing_file_exits_two() {
        assert_eq!(cmd_validate(Path::new("/nonexistent/spec.json")), EXIT_IO);
    }
}
