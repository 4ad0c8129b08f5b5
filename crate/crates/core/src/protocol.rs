//! Message bodies exchanged on top of the wire schemas.
//!
//! * Clients open with an `ack` carrying [`ClientHello`]; the bridge answers
//!   with [`BridgeHello`].
//! * Analysts send `assignment` (body `{spec}`), `deploy_code` (body `{mode,
//!   custom_code, clients}`) and `status` requests (body `{request}`, one of
//!   [`REQ_WATCH`], [`REQ_RESULTS`], [`REQ_NODES`]).
//! * Each delivered iteration reaches the user as a `result` message with an
//!   [`IterationResult`] body; discarded or failed iterations and the end of
//!   an assignment arrive as `status` messages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::envelope::{ErrorRecord, Payload};
use crate::net::ProcessInfo;

pub const REQ_WATCH: &str = "watch";
pub const REQ_RESULTS: &str = "results";
pub const REQ_NODES: &str = "nodes";

pub const STATE_RUNNING: &str = "running";
pub const STATE_FINISHED: &str = "finished";
pub const STATE_INCONSISTENT: &str = "inconsistent";
pub const STATE_FAILED: &str = "failed";
pub const STATE_DEPLOYED: &str = "deployed";
pub const STATE_PARTIAL: &str = "partial";

pub const INCONSISTENT_MESSAGE: &str = "iteration discarded: inconsistent signatures";

/// `client_id` used on result messages produced by the bridge itself.
pub const BRIDGE_ID: &str = "bridge";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientHello {
    pub role: String,
    pub client_id: String,
    pub model: String,
    #[serde(flatten)]
    pub process: ProcessInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeHello {
    pub role: String,
    #[serde(flatten)]
    pub process: ProcessInfo,
}

/// Outcome of a deployment, sent to the analyst as a `status` body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployReport {
    /// `deployed` or `partial`.
    pub state: String,
    pub target: String,
    pub signature: String,
    #[serde(default)]
    pub acked: Vec<String>,
    #[serde(default)]
    pub failed: BTreeMap<String, String>,
}

/// One delivered iteration of an assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub client_id: String,
    pub iteration: u32,
    /// Winning on-board signature.
    pub signature: String,
    pub offboard_signature: String,
    pub payload: Payload,
    pub kept: Vec<String>,
    #[serde(default)]
    pub discarded: Vec<String>,
    #[serde(default)]
    pub errors: BTreeMap<String, ErrorRecord>,
}

/// A status line of an assignment: inconsistent or failed iterations, and
/// the final `finished` marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentStatus {
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<String, ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub client_id: String,
    pub model: String,
    #[serde(flatten)]
    pub process: ProcessInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodesReport {
    pub state: String,
    pub bridge: ProcessInfo,
    pub clients: Vec<NodeInfo>,
}
