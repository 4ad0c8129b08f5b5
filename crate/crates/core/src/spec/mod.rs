//! Assignment data model, front-end validation, client selection and the
//! per-client task split.

mod filter;
mod select;

pub use filter::{eval_filter, parse_filter, Comparator, FilterError, FilterExpr, Operand};
pub use select::{select_clients, split_into_tasks, SelectError, SplitError};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::wire::{is_valid_user_id, Violation};

/// Upper bound on the sampling frequency in Hz.
pub const MAX_FREQUENCY: u64 = 1000;

/// Reserved key in on-board parameters.
pub const RESULT_FLOW: &str = "result_flow";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnboardComputation {
    Collect,
    Mean,
    Histogram,
    Custom,
}

impl OnboardComputation {
    pub const ALL: [Self; 4] = [Self::Collect, Self::Mean, Self::Histogram, Self::Custom];

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Collect => "collect",
            Self::Mean => "mean",
            Self::Histogram => "histogram",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffboardComputation {
    Collect,
    Average,
    Custom,
}

impl OffboardComputation {
    pub const ALL: [Self; 3] = [Self::Collect, Self::Average, Self::Custom];

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Collect => "collect",
            Self::Average => "average",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResultFlow {
    #[default]
    Isolated,
    Connected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnboardTask {
    pub computation: OnboardComputation,
    pub signals: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<String>,
    pub frequency: u32,
    pub samples: u64,
    #[serde(default)]
    pub parameters: Map<String, Value>,
}

impl OnboardTask {
    pub fn result_flow(&self) -> ResultFlow {
        match self.parameters.get(RESULT_FLOW).and_then(Value::as_str) {
            Some("connected") => ResultFlow::Connected,
            _ => ResultFlow::Isolated,
        }
    }

    /// Signal whose samples are buffered.
    pub fn signal(&self) -> &str {
        self.signals.first().map(String::as_str).unwrap_or_default()
    }

    /// Nominal collection time in seconds.
    pub fn nominal_seconds(&self) -> f64 {
        self.samples as f64 / f64::from(self.frequency.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffboardTask {
    pub computation: OffboardComputation,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientSelector {
    All,
    Random(usize),
    Ids(Vec<String>),
    Model(String),
}

impl ClientSelector {
    /// Parses the command-line form: `all | random:N | ids:c1,c2 | model:NAME`.
    pub fn parse_cli(text: &str) -> Result<Self, String> {
        let parsed = match text.split_once(':') {
            None if text == "all" => ClientSelector::All,
            Some(("random", n)) => ClientSelector::Random(
                n.trim()
                    .parse()
                    .map_err(|_| format!("random count {n:?} is not a positive integer"))?,
            ),
            Some(("ids", list)) => ClientSelector::Ids(
                list.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect(),
            ),
            Some(("model", name)) => ClientSelector::Model(name.trim().to_owned()),
            _ => return Err(format!("unrecognized client selector {text:?}")),
        };
        parsed.check()?;
        Ok(parsed)
    }

    fn check(&self) -> Result<(), String> {
        match self {
            ClientSelector::Random(0) => Err("random count must be at least 1".into()),
            ClientSelector::Ids(ids) if ids.is_empty() => Err("ids list is empty".into()),
            ClientSelector::Ids(ids) => {
                let mut seen = std::collections::HashSet::new();
                match ids.iter().find(|id| !seen.insert(id.as_str())) {
                    Some(dup) => Err(format!("duplicate client id {dup}")),
                    None => Ok(()),
                }
            }
            ClientSelector::Model(m) if m.is_empty() => Err("model name is empty".into()),
            _ => Ok(()),
        }
    }

    /// Accepts `"all"`, a CLI-form string, a positive integer (random
    /// count), a list of ids, or `{"random": n}` / `{"ids": [..]}` /
    /// `{"model": name}`.
    pub fn from_json(value: &Value) -> Result<Self, String> {
        let sel = match value {
            Value::String(s) => return Self::parse_cli(s),
            Value::Number(n) => ClientSelector::Random(
                n.as_u64()
                    .ok_or("random count must be a positive integer")? as usize,
            ),
            Value::Array(items) => ClientSelector::Ids(
                items
                    .iter()
                    .map(|v| v.as_str().map(str::to_owned).ok_or("client ids must be strings"))
                    .collect::<Result<_, _>>()?,
            ),
            Value::Object(obj) if obj.len() == 1 => {
                let (key, v) = obj.iter().next().expect("one entry");
                match key.as_str() {
                    "random" => ClientSelector::Random(
                        v.as_u64().ok_or("random count must be a positive integer")? as usize,
                    ),
                    "ids" => return Self::from_json(v),
                    "model" => ClientSelector::Model(
                        v.as_str().ok_or("model must be a string")?.to_owned(),
                    ),
                    other => return Err(format!("unknown selector variant {other:?}")),
                }
            }
            _ => return Err("expected all, random, ids or model".into()),
        };
        sel.check()?;
        Ok(sel)
    }

    pub fn to_json(&self) -> Value {
        match self {
            ClientSelector::All => Value::from("all"),
            ClientSelector::Random(n) => serde_json::json!({ "random": n }),
            ClientSelector::Ids(ids) => serde_json::json!({ "ids": ids }),
            ClientSelector::Model(m) => serde_json::json!({ "model": m }),
        }
    }
}

impl fmt::Display for ClientSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientSelector::All => f.write_str("all"),
            ClientSelector::Random(n) => write!(f, "random:{n}"),
            ClientSelector::Ids(ids) => write!(f, "ids:{}", ids.join(",")),
            ClientSelector::Model(m) => write!(f, "model:{m}"),
        }
    }
}

impl FromStr for ClientSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_cli(s)
    }
}

impl Serialize for ClientSelector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ClientSelector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        Self::from_json(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSpec {
    pub name: String,
    pub user_id: String,
    pub clients: ClientSelector,
    pub onboard: OnboardTask,
    pub offboard: OffboardTask,
}

impl AssignmentSpec {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("assignment spec serializes")
    }

    pub fn uses_custom_onboard(&self) -> bool {
        self.onboard.computation == OnboardComputation::Custom
    }

    pub fn uses_custom_offboard(&self) -> bool {
        self.offboard.computation == OffboardComputation::Custom
    }
}

/// The unit of work sent to one client for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub assignment_id: String,
    pub user_id: String,
    pub client_id: String,
    pub iteration: u32,
    pub onboard: OnboardTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_model: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature_hint: Option<String>,
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, field: &str, reason: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_owned(),
            reason: reason.into(),
        });
    }

    fn object<'a>(&mut self, parent: &'a Map<String, Value>, key: &str, path: &str) -> Option<&'a Map<String, Value>> {
        match parent.get(key) {
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                self.push(path, "must be an object");
                None
            }
            None => {
                self.push(path, "missing required field");
                None
            }
        }
    }

    fn unknown_keys(&mut self, obj: &Map<String, Value>, allowed: &[&str], prefix: &str) {
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.push(&format!("{prefix}{key}"), "unknown field");
            }
        }
    }

    fn positive_int(&mut self, obj: &Map<String, Value>, key: &str, path: &str, max: Option<u64>) -> Option<u64> {
        match obj.get(key) {
            None => {
                self.push(path, "missing required field");
                None
            }
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 && max.is_none_or(|m| n <= m) => Some(n),
                Some(n) if n >= 1 => {
                    self.push(path, format!("must not exceed {}", max.unwrap_or(n)));
                    None
                }
                _ => {
                    self.push(path, "must be positive integer");
                    None
                }
            },
        }
    }

    fn keyword<T: Copy>(&mut self, obj: &Map<String, Value>, path: &str, all: &[T], name: fn(T) -> &'static str) -> Option<T> {
        let allowed: Vec<&str> = all.iter().map(|&k| name(k)).collect();
        match obj.get("computation") {
            None => {
                self.push(path, "missing required field");
                None
            }
            Some(Value::String(s)) => match all.iter().find(|&&k| name(k) == s) {
                Some(&k) => Some(k),
                None => {
                    self.push(path, format!("unknown keyword {s:?}; allowed: {}", allowed.join(", ")));
                    None
                }
            },
            Some(_) => {
                self.push(path, format!("must be one of: {}", allowed.join(", ")));
                None
            }
        }
    }
}

/// Checks a raw assignment document and builds the typed spec, or returns
/// every violation found (completeness, value types and ranges).
pub fn validate_assignment(doc: &Value) -> Result<AssignmentSpec, Vec<Violation>> {
    let mut c = Checker { violations: Vec::new() };
    let Value::Object(root) = doc else {
        c.push("", "assignment must be a JSON object");
        return Err(c.violations);
    };
    c.unknown_keys(root, &["name", "user_id", "clients", "onboard", "offboard"], "");

    let name = match root.get("name") {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
        Some(Value::String(_)) => {
            c.push("name", "must be non-empty");
            None
        }
        Some(_) => {
            c.push("name", "must be a string");
            None
        }
        None => {
            c.push("name", "missing required field");
            None
        }
    };

    let user_id = match root.get("user_id") {
        Some(Value::String(s)) if is_valid_user_id(s) => Some(s.clone()),
        Some(Value::String(_)) => {
            c.push("user_id", "must be non-empty letters, digits, '_' or '-'");
            None
        }
        Some(_) => {
            c.push("user_id", "must be a string");
            None
        }
        None => {
            c.push("user_id", "missing required field");
            None
        }
    };

    let clients = match root.get("clients") {
        Some(v) => match ClientSelector::from_json(v) {
            Ok(sel) => Some(sel),
            Err(reason) => {
                c.push("clients", reason);
                None
            }
        },
        None => {
            c.push("clients", "missing required field");
            None
        }
    };

    let onboard = c.object(root, "onboard", "onboard").and_then(|ob| {
        c.unknown_keys(ob, &["computation", "signals", "filters", "frequency", "samples", "parameters"], "onboard.");
        let computation = c.keyword(ob, "onboard.computation", &OnboardComputation::ALL, OnboardComputation::keyword);
        let signals = match ob.get("signals") {
            Some(Value::Array(items)) => {
                let names: Option<Vec<String>> = items
                    .iter()
                    .map(|v| v.as_str().filter(|s| !s.is_empty()).map(str::to_owned))
                    .collect();
                match names {
                    None => {
                        c.push("onboard.signals", "signal names must be non-empty strings");
                        None
                    }
                    Some(n) if n.is_empty() => {
                        c.push("onboard.signals", "must list at least one signal");
                        None
                    }
                    Some(n) if n.len() > 1 => {
                        c.push("onboard.signals", "only one signal per task is supported; x is bound to that signal");
                        None
                    }
                    Some(n) => Some(n),
                }
            }
            Some(_) => {
                c.push("onboard.signals", "must be a list of signal names");
                None
            }
            None => {
                c.push("onboard.signals", "missing required field");
                None
            }
        };
        let filters = match ob.get("filters") {
            None | Some(Value::Null) => Some(None),
            Some(Value::String(text)) => match parse_filter(text) {
                Ok(_) => Some(Some(text.clone())),
                Err(e) => {
                    c.push("onboard.filters", e.to_string());
                    None
                }
            },
            Some(_) => {
                c.push("onboard.filters", "must be a filter expression string");
                None
            }
        };
        let frequency = c.positive_int(ob, "frequency", "onboard.frequency", Some(MAX_FREQUENCY));
        let samples = c.positive_int(ob, "samples", "onboard.samples", None);
        let parameters = match ob.get("parameters") {
            None => Some(Map::new()),
            Some(Value::Object(p)) => {
                match p.get(RESULT_FLOW) {
                    None => {}
                    Some(Value::String(s)) if s == "isolated" || s == "connected" => {}
                    Some(_) => c.push("onboard.parameters.result_flow", "must be isolated or connected"),
                }
                Some(p.clone())
            }
            Some(_) => {
                c.push("onboard.parameters", "must be an object");
                None
            }
        };
        Some(OnboardTask {
            computation: computation?,
            signals: signals?,
            filters: filters?,
            frequency: frequency? as u32,
            samples: samples?,
            parameters: parameters?,
        })
    });

    let offboard = c.object(root, "offboard", "offboard").and_then(|ob| {
        c.unknown_keys(ob, &["computation", "iterations"], "offboard.");
        let computation = c.keyword(ob, "offboard.computation", &OffboardComputation::ALL, OffboardComputation::keyword);
        let iterations = if ob.contains_key("iterations") {
            c.positive_int(ob, "iterations", "offboard.iterations", Some(u64::from(u32::MAX)))
        } else {
            Some(1)
        };
        Some(OffboardTask {
            computation: computation?,
            iterations: iterations? as u32,
        })
    });

    if let (Some(on), Some(off)) = (&onboard, &offboard) {
        if on.result_flow() == ResultFlow::Connected && off.computation == OffboardComputation::Collect {
            c.push(
                "onboard.parameters.result_flow",
                "connected flow needs a numeric off-board result (average or custom), not collect",
            );
        }
    }

    if !c.violations.is_empty() {
        return Err(c.violations);
    }
    Ok(AssignmentSpec {
        name: name.expect("checked"),
        user_id: user_id.expect("checked"),
        clients: clients.expect("checked"),
        onboard: onboard.expect("checked"),
        offboard: offboard.expect("checked"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn listing_one() -> Value {
        let frequency = 10;
        json!({
            "name": "Sample Assignment",
            "user_id": "u1",
            "clients": "all",
            "onboard": {
                "computation": "collect",
                "signals": ["speed"],
                "filters": "x > 100",
                "frequency": frequency,
                "samples": 3600 * frequency,
            },
            "offboard": { "computation": "collect", "iterations": 10 },
        })
    }

    fn with(mut doc: Value, path: &[&str], v: Value) -> Value {
        let mut cur = &mut doc;
        for p in &path[..path.len() - 1] {
            cur = cur.get_mut(*p).unwrap();
        }
        cur[path[path.len() - 1]] = v;
        doc
    }

    fn fields(err: &[Violation]) -> Vec<&str> {
        err.iter().map(|v| v.field.as_str()).collect()
    }

    #[test]
    fn sample_assignment_is_valid() {
        let spec = validate_assignment(&listing_one()).unwrap();
        assert_eq!(spec.onboard.samples, 36_000);
        assert_eq!(spec.onboard.frequency, 10);
        assert_eq!(spec.offboard.iterations, 10);
        assert_eq!(spec.clients, ClientSelector::All);
        assert_eq!(spec.onboard.nominal_seconds(), 3600.0);
    }

    #[test]
    fn zero_frequency() {
        let err = validate_assignment(&with(listing_one(), &["onboard", "frequency"], json!(0))).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].field, "onboard.frequency");
        assert_eq!(err[0].reason, "must be positive integer");
    }

    #[test]
    fn fractional_and_negative_frequency() {
        for bad in [json!(10.5), json!(-1), json!("10")] {
            let err = validate_assignment(&with(listing_one(), &["onboard", "frequency"], bad)).unwrap_err();
            assert_eq!(fields(&err), ["onboard.frequency"]);
        }
        let err = validate_assignment(&with(listing_one(), &["onboard", "frequency"], json!(1001))).unwrap_err();
        assert!(err[0].reason.contains("exceed"));
    }

    #[test]
    fn misspelled_keyword_lists_allowed() {
        let err = validate_assignment(&with(listing_one(), &["onboard", "computation"], json!("colect"))).unwrap_err();
        assert_eq!(fields(&err), ["onboard.computation"]);
        for k in ["collect", "mean", "histogram", "custom"] {
            assert!(err[0].reason.contains(k));
        }
    }

    #[test]
    fn reports_all_violations() {
        let doc = json!({
            "name": "",
            "user_id": "u1",
            "clients": {"random": 0},
            "onboard": {"computation": "mean", "signals": [], "frequency": 5, "samples": 0, "extra": 1},
            "offboard": {"computation": "sum"},
        });
        let err = validate_assignment(&doc).unwrap_err();
        let f = fields(&err);
        for want in ["name", "clients", "onboard.signals", "onboard.samples", "onboard.extra", "offboard.computation"] {
            assert!(f.contains(&want), "missing {want}: {f:?}");
        }
    }

    #[test]
    fn multi_signal_tasks_are_rejected() {
        let err = validate_assignment(&with(listing_one(), &["onboard", "signals"], json!(["speed", "rpm"]))).unwrap_err();
        assert_eq!(fields(&err), ["onboard.signals"]);
    }

    #[test]
    fn bad_filter_is_reported() {
        let err = validate_assignment(&with(listing_one(), &["onboard", "filters"], json!("y > 1"))).unwrap_err();
        assert_eq!(fields(&err), ["onboard.filters"]);
        assert!(err[0].reason.contains("unknown identifier y"));
    }

    #[test]
    fn result_flow_values() {
        let doc = with(listing_one(), &["onboard", "parameters"], json!({"result_flow": "sideways"}));
        let err = validate_assignment(&doc).unwrap_err();
        assert_eq!(fields(&err), ["onboard.parameters.result_flow"]);

        let doc = with(listing_one(), &["onboard", "parameters"], json!({"result_flow": "connected"}));
        assert!(validate_assignment(&doc).is_err(), "connected + collect");
        let doc = with(doc, &["offboard", "computation"], json!("average"));
        let spec = validate_assignment(&doc).unwrap();
        assert_eq!(spec.onboard.result_flow(), ResultFlow::Connected);
    }

    #[test]
    fn iterations_default_to_one() {
        let doc = with(listing_one(), &["offboard"], json!({"computation": "collect"}));
        assert_eq!(validate_assignment(&doc).unwrap().offboard.iterations, 1);
    }

    #[test]
    fn validation_is_idempotent() {
        let spec = validate_assignment(&listing_one()).unwrap();
        let again = validate_assignment(&spec.to_value()).unwrap();
        assert_eq!(spec, again);
        for sel in ["random:3", "ids:c1,c2", "model:type_a"] {
            let doc = with(listing_one(), &["clients"], json!(sel));
            let s = validate_assignment(&doc).unwrap();
            assert_eq!(validate_assignment(&s.to_value()).unwrap(), s);
        }
    }

    #[test]
    fn selector_forms() {
        assert_eq!(ClientSelector::from_json(&json!(3)), Ok(ClientSelector::Random(3)));
        assert_eq!(
            ClientSelector::from_json(&json!(["c1", "c2"])),
            Ok(ClientSelector::Ids(vec!["c1".into(), "c2".into()]))
        );
        assert_eq!(
            ClientSelector::from_json(&json!({"model": "type_a"})),
            Ok(ClientSelector::Model("type_a".into()))
        );
        assert!(ClientSelector::from_json(&json!(["c1", "c1"])).is_err());
        assert!(ClientSelector::parse_cli("ids:").is_err());
        assert!(ClientSelector::parse_cli("some").is_err());
        assert_eq!("random:4".parse::<ClientSelector>(), Ok(ClientSelector::Random(4)));
        assert_eq!(ClientSelector::Ids(vec!["a".into(), "b".into()]).to_string(), "ids:a,b");
    }
}
