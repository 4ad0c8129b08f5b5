//! Fleet analytics with live replacement of custom computation code.
//!
//! Analysts submit assignments (an on-board task run by every selected client
//! plus an off-board task run on the bridge, repeated for a number of
//! iterations) and can swap the user-provided computation script on running
//! nodes between iterations. Every client result is tagged with the md5 of the
//! script that produced it, and the bridge only keeps the results whose
//! signature wins the per-iteration vote.
//!
//! Node roles:
//!
//! * [`bridge`]: the central server, one assignment handler per assignment.
//! * [`client`]: a vehicle node with a simulated sensor bus ([`sensors`]).
//! * [`cli`]: the analyst front-end.
//! * [`harness`]: multi-process scenario runner and latency benchmark.

pub mod audit;
pub mod bridge;
pub mod cli;
pub mod client;
pub mod codeswap;
pub mod envelope;
pub mod harness;
pub mod net;
pub mod numeric;
pub mod prng;
pub mod protocol;
pub mod sensors;
pub mod spec;
pub mod wire;

/// Scalar type of every sample and result value on the wire.
pub type Scalar = f64;

/// Sample buffer as exchanged between nodes.
pub type Samples = Vec<Scalar>;

/// Built-in histogram over wire samples.
pub type Histogram = numeric::Histogram<Scalar>;

pub use codeswap::{signature, CodeStore, CustomModule, Target};
pub use envelope::{Payload, ResultEnvelope};
pub use spec::{AssignmentSpec, ClientSelector, FilterExpr, TaskSpec};
pub use wire::{Kind, Message};
