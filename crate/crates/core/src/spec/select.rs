use std::collections::HashSet;

use thiserror::Error;

use super::{AssignmentSpec, ClientSelector, ResultFlow, TaskSpec};
use crate::prng::XorShift64Star;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectError {
    #[error("cannot select {requested} random clients from {available} registered")]
    NotEnoughClients { requested: usize, available: usize },
    #[error("unknown client id {0}")]
    UnknownClient(String),
    #[error("no registered client has model {0}")]
    NoSuchModel(String),
    #[error("no clients registered")]
    EmptyRegistry,
}

/// Resolves a selector against the registry of `(client_id, model)` pairs.
/// The result is sorted ascending.
pub fn select_clients(
    selector: &ClientSelector,
    registry: &[(String, String)],
    seed: u64,
) -> Result<Vec<String>, SelectError> {
    let mut ids: Vec<String> = registry.iter().map(|(id, _)| id.clone()).collect();
    ids.sort();
    let mut chosen = match selector {
        ClientSelector::All => {
            if ids.is_empty() {
                return Err(SelectError::EmptyRegistry);
            }
            ids
        }
        ClientSelector::Random(count) => {
            if *count > ids.len() {
                return Err(SelectError::NotEnoughClients {
                    requested: *count,
                    available: ids.len(),
                });
            }
            // Partial Fisher-Yates over the sorted ids.
            let mut rng = XorShift64Star::new(seed);
            for i in 0..*count {
                let j = i + rng.below((ids.len() - i) as u64) as usize;
                ids.swap(i, j);
            }
            ids.truncate(*count);
            ids
        }
        ClientSelector::Ids(wanted) => {
            let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
            if let Some(missing) = wanted.iter().find(|w| !known.contains(w.as_str())) {
                return Err(SelectError::UnknownClient(missing.clone()));
            }
            wanted.clone()
        }
        ClientSelector::Model(model) => {
            let matching: Vec<String> = registry
                .iter()
                .filter(|(_, m)| m == model)
                .map(|(id, _)| id.clone())
                .collect();
            if matching.is_empty() {
                return Err(SelectError::NoSuchModel(model.clone()));
            }
            matching
        }
    };
    chosen.sort();
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("an assignment needs at least one client")]
    NoClients,
    #[error("iteration {iteration} out of range for {iterations} iterations")]
    IterationOutOfRange { iteration: u32, iterations: u32 },
    #[error("input model given for an isolated result flow")]
    UnexpectedInputModel,
}

/// One task per client, identical except for `client_id`.
pub fn split_into_tasks(
    assignment_id: &str,
    spec: &AssignmentSpec,
    clients: &[String],
    iteration: u32,
    input_model: Option<&[f64]>,
) -> Result<Vec<TaskSpec>, SplitError> {
    if clients.is_empty() {
        return Err(SplitError::NoClients);
    }
    if iteration >= spec.offboard.iterations {
        return Err(SplitError::IterationOutOfRange {
            iteration,
            iterations: spec.offboard.iterations,
        });
    }
    if input_model.is_some() && spec.onboard.result_flow() != ResultFlow::Connected {
        return Err(SplitError::UnexpectedInputModel);
    }
    Ok(clients
        .iter()
        .map(|client_id| TaskSpec {
            assignment_id: assignment_id.to_owned(),
            user_id: spec.user_id.clone(),
            client_id: client_id.clone(),
            iteration,
            onboard: spec.onboard.clone(),
            input_model: input_model.map(<[f64]>::to_vec),
            signature_hint: None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::validate_assignment;
    use proptest::prelude::*;
    use serde_json::json;

    fn registry() -> Vec<(String, String)> {
        vec![
            ("c2".into(), "type_b".into()),
            ("c1".into(), "type_a".into()),
            ("c3".into(), "type_a".into()),
        ]
    }

    fn spec(connected: bool) -> AssignmentSpec {
        let mut doc = json!({
            "name": "t", "user_id": "u1", "clients": "all",
            "onboard": {"computation": "mean", "signals": ["speed"], "frequency": 10, "samples": 20},
            "offboard": {"computation": "average", "iterations": 3},
        });
        if connected {
            doc["onboard"]["parameters"] = json!({"result_flow": "connected"});
        }
        validate_assignment(&doc).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn all_is_sorted() {
        let got = select_clients(&ClientSelector::All, &registry(), 1).unwrap();
        assert_eq!(got, ids(&["c1", "c2", "c3"]));
    }

    #[test]
    fn unknown_id_is_named() {
        let sel = ClientSelector::Ids(ids(&["c2", "c9"]));
        assert_eq!(
            select_clients(&sel, &registry(), 0),
            Err(SelectError::UnknownClient("c9".into()))
        );
    }

    #[test]
    fn by_model() {
        let reg = vec![("c1".into(), "type_a".into()), ("c2".into(), "type_b".into())];
        let sel = ClientSelector::Model("type_a".into());
        assert_eq!(select_clients(&sel, &reg, 0).unwrap(), ids(&["c1"]));
        assert!(matches!(
            select_clients(&ClientSelector::Model("type_z".into()), &reg, 0),
            Err(SelectError::NoSuchModel(_))
        ));
    }

    #[test]
    fn random_too_many() {
        assert_eq!(
            select_clients(&ClientSelector::Random(4), &registry(), 0),
            Err(SelectError::NotEnoughClients { requested: 4, available: 3 })
        );
    }

    proptest! {
        #[test]
        fn random_selection_is_deterministic_and_distinct(n in 1usize..40, seed: u64, frac in 0.0f64..1.0) {
            let reg: Vec<(String, String)> = (0..n).map(|i| (format!("c{i:02}"), "m".into())).collect();
            let count = 1 + ((n - 1) as f64 * frac) as usize;
            let a = select_clients(&ClientSelector::Random(count), &reg, seed).unwrap();
            let b = select_clients(&ClientSelector::Random(count), &reg, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), count);
            let set: HashSet<_> = a.iter().collect();
            prop_assert_eq!(set.len(), count);
            let mut sorted = a.clone();
            sorted.sort();
            prop_assert_eq!(sorted, a);
        }

        #[test]
        fn all_ignores_seed(s1: u64, s2: u64) {
            prop_assert_eq!(
                select_clients(&ClientSelector::All, &registry(), s1),
                select_clients(&ClientSelector::All, &registry(), s2)
            );
        }
    }

    #[test]
    fn split_isolated() {
        let tasks = split_into_tasks("u1-1", &spec(false), &ids(&["c1", "c2", "c3"]), 0, None).unwrap();
        assert_eq!(tasks.len(), 3);
        assert!(tasks.iter().all(|t| t.input_model.is_none() && t.iteration == 0 && t.assignment_id == "u1-1"));
        assert_eq!(tasks[2].client_id, "c3");
    }

    #[test]
    fn split_connected_copies_model() {
        let tasks = split_into_tasks("u1-1", &spec(true), &ids(&["c1", "c2"]), 1, Some(&[2.0, 3.0])).unwrap();
        assert!(tasks.iter().all(|t| t.input_model.as_deref() == Some(&[2.0, 3.0][..])));
    }

    #[test]
    fn split_preconditions() {
        assert_eq!(split_into_tasks("a", &spec(false), &[], 0, None), Err(SplitError::NoClients));
        assert!(matches!(
            split_into_tasks("a", &spec(false), &ids(&["c1"]), 3, None),
            Err(SplitError::IterationOutOfRange { .. })
        ));
        assert_eq!(
            split_into_tasks("a", &spec(false), &ids(&["c1"]), 0, Some(&[1.0])),
            Err(SplitError::UnexpectedInputModel)
        );
    }
}
