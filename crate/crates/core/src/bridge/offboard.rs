use std::time::Duration;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::codeswap::{CodeStore, ExecError, Sandbox, StoreError, Target};
use crate::envelope::{builtin_signature, ClientPayload, Payload};
use crate::numeric;
use crate::spec::OffboardComputation;

#[derive(Debug, Error)]
pub enum OffboardError {
    #[error("no client results to aggregate")]
    Empty,
    #[error("cannot average {0}")]
    Shape(String),
    #[error("no off-board custom code deployed for user {0}")]
    NotDeployed(String),
    #[error("off-board code store: {0}")]
    Store(String),
    #[error("{0}")]
    Exec(#[from] ExecError),
    #[error("no sandbox executable available for off-board custom code")]
    NoSandbox,
}

impl OffboardError {
    pub fn reason(&self) -> &'static str {
        match self {
            OffboardError::Exec(e) => e.reason(),
            OffboardError::Shape(_) | OffboardError::Empty => "shape",
            _ => "offboard",
        }
    }
}

/// Where and how off-board custom code runs.
pub struct OffboardContext<'a> {
    pub user_id: &'a str,
    pub iteration: u32,
    pub store: &'a CodeStore,
    pub sandbox: Option<&'a Sandbox>,
    pub timeout: Duration,
}

/// Aggregates the kept client payloads, given as `(client_id, payload)`
/// sorted by client id. Returns the result and the signature of the code
/// that produced it.
pub fn offboard_compute(
    computation: OffboardComputation,
    inputs: &[(String, Payload)],
    ctx: &OffboardContext<'_>,
) -> Result<(Payload, String), OffboardError> {
    match computation {
        OffboardComputation::Collect => Ok((collect(inputs), builtin_signature("collect"))),
        OffboardComputation::Average => Ok((average(inputs)?, builtin_signature("average"))),
        OffboardComputation::Custom => {
            let module = ctx
                .store
                .load_module(ctx.user_id, Target::Offboard)
                .map_err(|e| match e {
                    StoreError::NotDeployed { .. } => OffboardError::NotDeployed(ctx.user_id.to_owned()),
                    other => OffboardError::Store(other.to_string()),
                })?;
            let sandbox = ctx.sandbox.ok_or(OffboardError::NoSandbox)?;
            let (input, params) = custom_input(inputs, ctx.iteration)?;
            let out = sandbox.execute(&module, &input, &params, ctx.timeout)?;
            Ok((out.value, out.signature))
        }
    }
}

pub fn collect(inputs: &[(String, Payload)]) -> Payload {
    let mut items: Vec<ClientPayload> = inputs
        .iter()
        .map(|(client_id, payload)| ClientPayload {
            client_id: client_id.clone(),
            payload: payload.clone(),
        })
        .collect();
    items.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    Payload::Collected(items)
}

/// Mean of scalars, or element-wise mean of equal-length vectors.
pub fn average(inputs: &[(String, Payload)]) -> Result<Payload, OffboardError> {
    if inputs.is_empty() {
        return Err(OffboardError::Empty);
    }
    if let Some(scalars) = inputs
        .iter()
        .map(|(_, p)| match p {
            Payload::Scalar(v) => Some(*v),
            _ => None,
        })
        .collect::<Option<Vec<f64>>>()
    {
        let m = numeric::mean(&scalars).ok_or(OffboardError::Empty)?;
        return Ok(Payload::Scalar(m));
    }
    let rows = inputs
        .iter()
        .map(|(_, p)| match p {
            Payload::Vector(v) => Ok(v.as_slice()),
            _ => Err(OffboardError::Shape("a mix of scalars and vectors".into())),
        })
        .collect::<Result<Vec<&[f64]>, _>>()?;
    numeric::elementwise_mean(&rows)
        .map(Payload::Vector)
        .ok_or_else(|| OffboardError::Shape("vectors of different lengths".into()))
}

/// Concatenated client vectors plus the parameters describing how to split
/// them again.
pub fn custom_input(
    inputs: &[(String, Payload)],
    iteration: u32,
) -> Result<(Vec<f64>, Map<String, Value>), OffboardError> {
    if inputs.is_empty() {
        return Err(OffboardError::Empty);
    }
    let mut flat = Vec::new();
    let mut lengths = Vec::new();
    let mut ids = Vec::new();
    for (id, payload) in inputs {
        let v = payload
            .as_vector()
            .ok_or_else(|| OffboardError::Shape("collected payloads".into()))?;
        lengths.push(v.len());
        flat.extend(v);
        ids.push(id.clone());
    }
    let mut params = Map::new();
    params.insert("n_inputs".into(), Value::from(inputs.len()));
    params.insert("input_lengths".into(), Value::from(lengths));
    params.insert("client_ids".into(), Value::from(ids));
    params.insert("iteration".into(), Value::from(iteration));
    Ok((flat, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(values: Vec<Payload>) -> Vec<(String, Payload)> {
        values
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("c{}", i + 1), p))
            .collect()
    }

    #[test]
    fn average_of_scalars() {
        let got = average(&inputs(vec![Payload::Scalar(2.0), Payload::Scalar(4.0), Payload::Scalar(6.0)]));
        assert_eq!(got.unwrap(), Payload::Scalar(4.0));
    }

    #[test]
    fn average_of_vectors() {
        let got = average(&inputs(vec![Payload::Vector(vec![1.0, 2.0]), Payload::Vector(vec![3.0, 4.0])]));
        assert_eq!(got.unwrap(), Payload::Vector(vec![2.0, 3.0]));
    }

    #[test]
    fn average_rejects_mixed_lengths() {
        let got = average(&inputs(vec![Payload::Vector(vec![1.0]), Payload::Vector(vec![3.0, 4.0])]));
        assert!(matches!(got, Err(OffboardError::Shape(_))));
        let got = average(&inputs(vec![Payload::Scalar(1.0), Payload::Vector(vec![3.0])]));
        assert!(matches!(got, Err(OffboardError::Shape(_))));
    }

    #[test]
    fn collect_sorts_by_client() {
        let got = collect(&[
            ("c2".into(), Payload::Scalar(7.0)),
            ("c1".into(), Payload::Scalar(5.0)),
        ]);
        let Payload::Collected(items) = got else { panic!() };
        assert_eq!(items[0].client_id, "c1");
        assert_eq!(items[1].payload, Payload::Scalar(7.0));
    }

    #[test]
    fn custom_input_shape() {
        let (flat, params) = custom_input(
            &inputs(vec![Payload::Vector(vec![1.0, 2.0]), Payload::Scalar(3.0)]),
            4,
        )
        .unwrap();
        assert_eq!(flat, [1.0, 2.0, 3.0]);
        assert_eq!(params["input_lengths"], serde_json::json!([2, 1]));
        assert_eq!(params["client_ids"], serde_json::json!(["c1", "c2"]));
        assert_eq!(params["iteration"], 4);
    }
}
