//! Isolated execution. Each call runs the script in a fresh `fleet-sandbox`
//! child process that is killed when the timeout expires, so neither a hang
//! nor a crash inside custom code reaches the calling node.

use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use wait_timeout::ChildExt;

use super::script;
use super::validate::static_checks;
use super::CustomModule;
use crate::envelope::Payload;

pub const SANDBOX_BIN: &str = "fleet-sandbox";

#[derive(Debug, Clone, PartialEq)]
pub struct CustomResult {
    pub value: Payload,
    pub signature: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Error)]
pub enum ExecError {
    #[error("custom code exceeded its {limit:?} timeout and was killed after {elapsed:?}")]
    Timeout { limit: Duration, elapsed: Duration },
    #[error("custom code failed ({stage}): {message}")]
    Fault { stage: String, message: String },
    #[error("custom code {0}")]
    ReturnType(String),
    #[error("sandbox failure: {0}")]
    Sandbox(String),
}

impl ExecError {
    /// Short category used in error envelopes.
    pub fn reason(&self) -> &'static str {
        match self {
            ExecError::Timeout { .. } => "timeout",
            ExecError::Fault { .. } => "fault",
            ExecError::ReturnType(_) => "return_type",
            ExecError::Sandbox(_) => "sandbox",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Request {
    source: String,
    input: Vec<f64>,
    params: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Response {
    Ok(Value),
    Fault { stage: String, message: String },
}

/// Handle on the sandbox executable.
#[derive(Debug, Clone)]
pub struct Sandbox {
    exe: PathBuf,
}

impl Sandbox {
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        Self { exe: exe.into() }
    }

    /// Finds the sandbox binary: `$FLEETSWAP_SANDBOX`, then next to the
    /// running executable, then one directory up (test binaries live in
    /// `target/<profile>/deps`).
    pub fn locate() -> io::Result<Self> {
        if let Some(p) = std::env::var_os("FLEETSWAP_SANDBOX") {
            return Ok(Self::new(p));
        }
        let exe = std::env::current_exe()?;
        let dir = exe.parent();
        for d in [dir, dir.and_then(Path::parent)].into_iter().flatten() {
            let candidate = d.join(SANDBOX_BIN);
            if candidate.is_file() {
                return Ok(Self::new(candidate));
            }
        }
        Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{SANDBOX_BIN} not found near {}", exe.display()),
        ))
    }

    pub fn exe(&self) -> &Path {
        &self.exe
    }

    /// Runs `custom_code(input)` with `params` readable through `params()`.
    /// The return value is re-checked here regardless of what the module
    /// passed at validation time.
    pub fn execute(
        &self,
        module: &CustomModule,
        input: &[f64],
        params: &Map<String, Value>,
        timeout: Duration,
    ) -> Result<CustomResult, ExecError> {
        let started = Instant::now();
        let request = serde_json::to_vec(&Request {
            source: module.source.clone(),
            input: input.to_vec(),
            params: params.clone(),
        })
        .map_err(|e| ExecError::Sandbox(e.to_string()))?;

        let mut child = Command::new(&self.exe)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ExecError::Sandbox(format!("spawning {}: {e}", self.exe.display())))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&request);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });

        let status = match child.wait_timeout(timeout) {
            Ok(Some(status)) => status,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                let elapsed = started.elapsed();
                let _ = writer.join();
                let _ = reader.join();
                return Err(ExecError::Timeout { limit: timeout, elapsed });
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExecError::Sandbox(e.to_string()));
            }
        };
        let _ = writer.join();
        let output = reader
            .join()
            .map_err(|_| ExecError::Sandbox("output reader panicked".into()))?
            .map_err(|e| ExecError::Sandbox(e.to_string()))?;
        let elapsed = started.elapsed();

        let response: Response = match serde_json::from_slice(&output) {
            Ok(r) => r,
            Err(_) => {
                return Err(ExecError::Fault {
                    stage: "runtime".into(),
                    message: format!("sandbox process ended abnormally ({status})"),
                })
            }
        };
        match response {
            Response::Fault { stage, message } => Err(ExecError::Fault { stage, message }),
            Response::Ok(value) => {
                let value = script::check_return(&value).map_err(ExecError::ReturnType)?;
                Ok(CustomResult {
                    value,
                    signature: module.signature.clone(),
                    elapsed,
                })
            }
        }
    }
}

/// Entry point of the sandbox process: one JSON request on stdin, one JSON
/// response on stdout.
pub fn sandbox_main() -> i32 {
    let mut raw = Vec::new();
    if io::stdin().read_to_end(&mut raw).is_err() {
        return 2;
    }
    let response = match serde_json::from_slice::<Request>(&raw) {
        Err(e) => Response::Fault {
            stage: "request".into(),
            message: e.to_string(),
        },
        Ok(req) => run_request(&req),
    };
    let mut out = io::stdout().lock();
    match serde_json::to_writer(&mut out, &response) {
        Ok(()) => {
            let _ = out.flush();
            0
        }
        Err(_) => 2,
    }
}

fn run_request(req: &Request) -> Response {
    let ast = match static_checks(&req.source) {
        Ok(ast) => ast,
        Err(report) => {
            return Response::Fault {
                stage: report.stage.as_str().into(),
                message: report.summary(),
            }
        }
    };
    let engine = script::new_engine(&req.params, None);
    match script::call_entry(&engine, &ast, &req.input) {
        Ok(v) => Response::Ok(script::to_transport(&v)),
        Err(e) => Response::Fault {
            stage: "runtime".into(),
            message: e,
        },
    }
}
