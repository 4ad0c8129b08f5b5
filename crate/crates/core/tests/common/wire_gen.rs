//! Generators of schema-valid wire messages.

use fleetswap::wire::{decode_frame, encode_custom_code, Decoded, Kind, Message};
use proptest::collection::{btree_map, vec};
use proptest::prelude::*;
use serde_json::{Map, Value};

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -1e6..1e6f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
    ]
}

pub fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9_-]{0,12}",
        "\\PC{0,24}",
        Just("quote \" backslash \\ newline \n tab \t nul \u{0}".to_owned()),
    ]
}

pub fn id() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_-]{1,12}"
}

pub fn json_leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        finite().prop_map(Value::from),
        text().prop_map(Value::from),
    ]
}

pub fn json() -> impl Strategy<Value = Value> {
    json_leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            vec(inner.clone(), 0..4).prop_map(Value::Array),
            btree_map(text(), inner, 0..4).prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

pub fn extras() -> impl Strategy<Value = Map<String, Value>> {
    btree_map("x_[a-z]{1,6}", json(), 0..3).prop_map(|m| m.into_iter().collect())
}

pub fn payload() -> impl Strategy<Value = Value> {
    prop_oneof![
        finite().prop_map(Value::from),
        vec(finite(), 0..8).prop_map(Value::from),
    ]
}

pub fn body(kind: Kind) -> BoxedStrategy<Map<String, Value>> {
    let fields: BoxedStrategy<Vec<(String, Value)>> = match kind {
        Kind::Assignment => json()
            .prop_map(|v| vec![("spec".into(), serde_json::json!({ "inner": v }))])
            .boxed(),
        Kind::DeployCode => (any::<bool>(), "\\PC{0,200}")
            .prop_map(|(on, src)| {
                let mode = if on { "deploy_onboard" } else { "deploy_offboard" };
                vec![
                    ("mode".into(), Value::from(mode)),
                    ("custom_code".into(), Value::from(encode_custom_code(&src))),
                ]
            })
            .boxed(),
        Kind::Task => (id(), any::<u32>(), json())
            .prop_map(|(c, it, extra)| {
                vec![
                    ("client_id".into(), Value::from(c)),
                    ("iteration".into(), Value::from(it)),
                    ("onboard".into(), serde_json::json!({ "computation": "mean", "extra": extra })),
                ]
            })
            .boxed(),
        Kind::Result => (id(), any::<u32>(), "[0-9a-f]{32}", prop::option::of(payload()))
            .prop_map(|(c, it, sig, p)| {
                let mut f = vec![
                    ("client_id".into(), Value::from(c)),
                    ("iteration".into(), Value::from(it)),
                    ("signature".into(), Value::from(sig)),
                ];
                match p {
                    Some(p) => f.push(("payload".into(), p)),
                    None => f.push(("error".into(), serde_json::json!({"reason": "timeout"}))),
                }
                f
            })
            .boxed(),
        Kind::Status => text().prop_map(|s| vec![("state".into(), Value::from(s))]).boxed(),
        Kind::Error => text().prop_map(|s| vec![("message".into(), Value::from(s))]).boxed(),
        Kind::Ack => Just(Vec::new()).boxed(),
    };
    (fields, extras())
        .prop_map(|(fields, mut map)| {
            map.extend(fields);
            map
        })
        .boxed()
}

pub fn message() -> impl Strategy<Value = Message> {
    prop::sample::select(Kind::ALL.to_vec()).prop_flat_map(|kind| {
        let ids = if kind == Kind::Ack {
            (prop_oneof![Just(String::new()), id()].boxed(), prop_oneof![Just(String::new()), id()].boxed())
        } else {
            (prop_oneof![Just("*".to_owned()), id()].boxed(), id().boxed())
        };
        (ids, body(kind)).prop_map(move |((aid, uid), body)| Message {
            kind,
            assignment_id: aid,
            user_id: uid,
            body,
        })
    })
}

/// Feeds `stream` to the decoder in pieces cut at `cuts` and returns the
/// messages recovered.
pub fn decode_in_pieces(stream: &[u8], cuts: &[usize]) -> Vec<Message> {
    let mut out = Vec::new();
    let mut buffer = Vec::new();
    let mut last = 0;
    for &cut in cuts.iter().chain(std::iter::once(&stream.len())) {
        buffer.extend_from_slice(&stream[last..cut]);
        last = cut;
        while let Decoded::Message { message, consumed } = decode_frame(&buffer).unwrap() {
            out.push(message);
            buffer.drain(..consumed);
        }
    }
    assert!(buffer.is_empty(), "{} bytes left over", buffer.len());
    out
}
