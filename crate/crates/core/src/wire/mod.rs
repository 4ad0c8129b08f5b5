//! Message schemas and length-prefixed framing.
//!
//! Every message is a JSON object `{"kind", "assignment_id", "user_id",
//! "body"}` carried in a frame made of a 4-byte big-endian payload length and
//! the UTF-8 payload. Session-level requests that are not scoped to one
//! assignment use [`ANY_ASSIGNMENT`] as their assignment id.

mod frame;

pub use frame::{
    decode_frame, encode_frame, frame_bytes, read_message, write_message, Decoded,
    FRAME_HEADER_LEN, MAX_FRAME_LEN,
};

use std::fmt;
use std::str::FromStr;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::envelope::Payload;

/// Placeholder assignment id for session-level requests.
pub const ANY_ASSIGNMENT: &str = "*";

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame too large: {0} bytes (limit {MAX_FRAME_LEN})")]
    FrameTooLarge(usize),
    #[error("protocol error: {field}: {reason}")]
    Protocol { field: String, reason: String },
    #[error("malformed JSON payload: {0}")]
    Json(String),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WireError {
    pub fn protocol(field: impl Into<String>, reason: impl Into<String>) -> Self {
        WireError::Protocol {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Assignment,
    DeployCode,
    Task,
    Result,
    Status,
    Error,
    Ack,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Assignment,
        Kind::DeployCode,
        Kind::Task,
        Kind::Result,
        Kind::Status,
        Kind::Error,
        Kind::Ack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Assignment => "assignment",
            Kind::DeployCode => "deploy_code",
            Kind::Task => "task",
            Kind::Result => "result",
            Kind::Status => "status",
            Kind::Error => "error",
            Kind::Ack => "ack",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| WireError::protocol("kind", format!("unknown kind {s:?}")))
    }
}

/// Deploy mode carried in `deploy_code` bodies.
pub const DEPLOY_ONBOARD: &str = "deploy_onboard";
pub const DEPLOY_OFFBOARD: &str = "deploy_offboard";

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: Kind,
    pub assignment_id: String,
    pub user_id: String,
    pub body: Map<String, Value>,
}

impl Message {
    pub fn new(kind: Kind, assignment_id: impl Into<String>, user_id: impl Into<String>) -> Self {
        Self {
            kind,
            assignment_id: assignment_id.into(),
            user_id: user_id.into(),
            body: Map::new(),
        }
    }

    pub fn ack() -> Self {
        Self::new(Kind::Ack, "", "")
    }

    pub fn error(assignment_id: &str, user_id: &str, text: impl Into<String>) -> Self {
        Self::new(Kind::Error, non_empty_or_any(assignment_id), non_empty_or_any(user_id))
            .with("message", text.into())
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.body.insert(key.to_owned(), value.into());
        self
    }

    /// Builds a message whose body is the serialization of `body`, which must
    /// serialize to a JSON object.
    pub fn with_body<T: Serialize>(
        kind: Kind,
        assignment_id: impl Into<String>,
        user_id: impl Into<String>,
        body: &T,
    ) -> Result<Self, WireError> {
        let mut msg = Self::new(kind, assignment_id, user_id);
        match serde_json::to_value(body).map_err(|e| WireError::Json(e.to_string()))? {
            Value::Object(map) => msg.body = map,
            _ => return Err(WireError::protocol("body", "must be a JSON object")),
        }
        Ok(msg)
    }

    /// Deserializes the whole body as `T`.
    pub fn body_as<T: DeserializeOwned>(&self) -> Result<T, WireError> {
        serde_json::from_value(Value::Object(self.body.clone()))
            .map_err(|e| WireError::protocol("body", e.to_string()))
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.body.get(key).and_then(Value::as_str)
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("kind".into(), Value::from(self.kind.as_str()));
        obj.insert("assignment_id".into(), Value::from(self.assignment_id.clone()));
        obj.insert("user_id".into(), Value::from(self.user_id.clone()));
        obj.insert("body".into(), Value::Object(self.body.clone()));
        Value::Object(obj)
    }

    /// Parses the envelope fields of a message object. Body schemas are
    /// checked separately by [`validate_message`].
    pub fn from_value(value: Value) -> Result<Self, WireError> {
        let Value::Object(mut obj) = value else {
            return Err(WireError::protocol("payload", "not a JSON object"));
        };
        let kind: Kind = match obj.get("kind") {
            Some(Value::String(s)) => s.parse()?,
            Some(_) => return Err(WireError::protocol("kind", "must be a string")),
            None => return Err(WireError::protocol("kind", "missing required field")),
        };
        let mut text_field = |name: &str| -> Result<String, WireError> {
            match obj.remove(name) {
                Some(Value::String(s)) => Ok(s),
                Some(_) => Err(WireError::protocol(name, "must be a string")),
                None if kind == Kind::Ack => Ok(String::new()),
                None => Err(WireError::protocol(name, "missing required field")),
            }
        };
        let assignment_id = text_field("assignment_id")?;
        let user_id = text_field("user_id")?;
        let body = match obj.remove("body") {
            Some(Value::Object(map)) => map,
            Some(_) => return Err(WireError::protocol("body", "must be a JSON object")),
            None => Map::new(),
        };
        Ok(Self {
            kind,
            assignment_id,
            user_id,
            body,
        })
    }
}

fn non_empty_or_any(s: &str) -> &str {
    if s.is_empty() {
        ANY_ASSIGNMENT
    } else {
        s
    }
}

/// A single schema violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

/// User ids end up in file names, so they are restricted to
/// `[A-Za-z0-9_-]`.
pub fn is_valid_user_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Checks the kind-specific schema and reports every violation found.
pub fn validate_message(msg: &Message) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut bad = |field: &str, reason: &str| {
        out.push(Violation {
            field: field.to_owned(),
            reason: reason.to_owned(),
        })
    };

    if msg.kind != Kind::Ack {
        if msg.assignment_id.is_empty() {
            bad("assignment_id", "must be non-empty");
        }
        if msg.user_id.is_empty() {
            bad("user_id", "must be non-empty");
        } else if msg.user_id != ANY_ASSIGNMENT && !is_valid_user_id(&msg.user_id) {
            bad("user_id", "may only contain letters, digits, '_' and '-'");
        }
    }

    let body = &msg.body;
    let text = |key: &str| body.get(key).and_then(Value::as_str);
    let uint = |key: &str| body.get(key).and_then(Value::as_u64);

    match msg.kind {
        Kind::Assignment => {
            if !body.get("spec").is_some_and(Value::is_object) {
                bad("spec", "missing or not an object");
            }
        }
        Kind::DeployCode => {
            match text("mode") {
                None => bad("mode", "missing required field"),
                Some(DEPLOY_ONBOARD | DEPLOY_OFFBOARD) => {}
                Some(_) => bad("mode", "must be deploy_onboard or deploy_offboard"),
            }
            match text("custom_code") {
                None => bad("custom_code", "missing required field"),
                Some(code) => {
                    if decode_custom_code(code).is_err() {
                        bad("custom_code", "not valid base64-encoded UTF-8 text");
                    }
                }
            }
        }
        Kind::Task => {
            if text("client_id").is_none_or(str::is_empty) {
                bad("client_id", "missing required field");
            }
            if uint("iteration").is_none() {
                bad("iteration", "missing or not a non-negative integer");
            }
            if !body.get("onboard").is_some_and(Value::is_object) {
                bad("onboard", "missing or not an object");
            }
        }
        Kind::Result => {
            if text("client_id").is_none_or(str::is_empty) {
                bad("client_id", "missing required field");
            }
            if uint("iteration").is_none() {
                bad("iteration", "missing or not a non-negative integer");
            }
            if text("signature").is_none_or(str::is_empty) {
                bad("signature", "missing required field");
            }
            let payload = body.get("payload");
            let error = body.get("error");
            match (payload, error) {
                (Some(_), Some(_)) => bad("payload", "payload and error are mutually exclusive"),
                (None, None) => bad("payload", "one of payload or error is required"),
                (Some(p), None) => {
                    if serde_json::from_value::<Payload>(p.clone()).is_err() {
                        bad("payload", "must be a number, a list of numbers or collected results");
                    }
                }
                (None, Some(e)) => {
                    if !e.is_object() {
                        bad("error", "must be an object");
                    }
                }
            }
        }
        Kind::Status => {
            if text("state").is_none() && text("request").is_none() {
                bad("state", "status needs a state or a request field");
            }
        }
        Kind::Error => {
            if text("message").is_none() {
                bad("message", "missing required field");
            }
        }
        Kind::Ack => {}
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn encode_custom_code(source: &str) -> String {
    base64::engine::general_purpose::STANDARD.encode(source.as_bytes())
}

pub fn decode_custom_code(encoded: &str) -> Result<String, WireError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(encoded)
        .map_err(|e| WireError::protocol("custom_code", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| WireError::protocol("custom_code", e.to_string()))
}
