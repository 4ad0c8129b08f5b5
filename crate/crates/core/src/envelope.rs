//! Result values and the per-client result envelope.

use serde::{Deserialize, Serialize};

use crate::numeric;

/// Signature prefix used for results of built-in computations.
pub const BUILTIN_PREFIX: &str = "builtin:";

pub fn builtin_signature(keyword: &str) -> String {
    format!("{BUILTIN_PREFIX}{keyword}")
}

/// A numeric result: a scalar, a vector, or (off-board collect only) the
/// pass-through list of client payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Scalar(f64),
    Vector(Vec<f64>),
    Collected(Vec<ClientPayload>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPayload {
    pub client_id: String,
    pub payload: Payload,
}

impl Payload {
    pub fn is_finite(&self) -> bool {
        match self {
            Payload::Scalar(v) => v.is_finite(),
            Payload::Vector(v) => numeric::all_finite(v),
            Payload::Collected(items) => items.iter().all(|c| c.payload.is_finite()),
        }
    }

    /// Flat numeric view: scalars become one-element vectors. `None` for
    /// collected payloads.
    pub fn as_vector(&self) -> Option<Vec<f64>> {
        match self {
            Payload::Scalar(v) => Some(vec![*v]),
            Payload::Vector(v) => Some(v.clone()),
            Payload::Collected(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    /// Short machine-readable category, e.g. `timeout`, `fault`, `partial`.
    pub reason: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl ErrorRecord {
    pub fn new(reason: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            message: message.into(),
            elapsed_ms: None,
        }
    }
}

/// One client's outcome for one iteration. Exactly one of `payload` and
/// `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub assignment_id: String,
    pub client_id: String,
    pub iteration: u32,
    pub signature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl ResultEnvelope {
    pub fn ok(
        assignment_id: &str,
        client_id: &str,
        iteration: u32,
        signature: impl Into<String>,
        payload: Payload,
    ) -> Self {
        Self {
            assignment_id: assignment_id.to_owned(),
            client_id: client_id.to_owned(),
            iteration,
            signature: signature.into(),
            payload: Some(payload),
            error: None,
        }
    }

    pub fn failed(
        assignment_id: &str,
        client_id: &str,
        iteration: u32,
        signature: impl Into<String>,
        error: ErrorRecord,
    ) -> Self {
        Self {
            assignment_id: assignment_id.to_owned(),
            client_id: client_id.to_owned(),
            iteration,
            signature: signature.into(),
            payload: None,
            error: Some(error),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_json_shapes() {
        assert_eq!(serde_json::to_string(&Payload::Scalar(4.0)).unwrap(), "4.0");
        assert_eq!(
            serde_json::to_string(&Payload::Vector(vec![1.0, 2.5])).unwrap(),
            "[1.0,2.5]"
        );
        let back: Payload = serde_json::from_str("[1, 2]").unwrap();
        assert_eq!(back, Payload::Vector(vec![1.0, 2.0]));
        let collected: Payload =
            serde_json::from_str(r#"[{"client_id":"c1","payload":5.0}]"#).unwrap();
        assert!(matches!(collected, Payload::Collected(ref v) if v.len() == 1));
    }

    #[test]
    fn finiteness() {
        assert!(Payload::Vector(vec![1.0, 2.0]).is_finite());
        assert!(!Payload::Scalar(f64::NAN).is_finite());
        assert!(!Payload::Vector(vec![1.0, f64::INFINITY]).is_finite());
    }
}
