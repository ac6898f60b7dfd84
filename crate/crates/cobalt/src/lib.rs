//! Byzantine fault tolerant agreement for open networks with heterogeneous
//! trust, together with a deterministic adversarial network simulator for
//! exercising it at desk scale.
//!
//! The stack is layered bottom-up:
//!
//! * [`topology`] — trust configurations built from essential subsets,
//!   parameter validation, fault classification (healthy / unblocked),
//!   pairwise linkage, and the weak/strong support thresholds every other
//!   layer counts messages against.
//! * [`crs`] — a common randomness source: threshold share reveals mixed
//!   into per-tag coins and seeds that stay unpredictable until honest
//!   nodes open them.
//! * [`rbc`] — reliable broadcast (echo, ready, accept) plus the
//!   democratic variant that gates echoes on per-node support verdicts.
//! * [`abba`] — asynchronous binary agreement driven by coin flips.
//! * [`mvba`] — multi-valued agreement that elects, prunes by coin-derived
//!   indices, and terminates through an embedded binary instance.
//! * [`dabc`] — the governance layer: amendment dissemination, periodic
//!   stamping, per-slot agreement, activation times, and the waiting query
//!   that makes ratifications visible before they activate.
//! * [`txorder`] — transaction ordering on top: per-view block acceptance,
//!   coordinated view changes, and a censorship-resistant fallback chain.
//! * [`simnet`] — the deterministic discrete-event network with scripted
//!   faults and an adversary that schedules delivery within a fairness
//!   bound.
//! * [`harness`] — scenario scripts, run orchestration, seed sweeps,
//!   invariant verification over run records, and brute-force oracles.
//!
//! Every run is a pure function of its scenario and seed. Run records
//! serialize to line-delimited text that replays byte-for-byte.
//!
//! Runnable demonstrations live in `examples/`; try
//! `cargo run --example topology_report` or `cargo run --example
//! dabc_lifecycle`. The `cobalt` binary wraps the same entry points as
//! `analyze`, `run`, `sweep`, and `oracle` subcommands.

pub mod topology;
pub mod msg;
pub mod crs;
pub mod rbc;
pub mod abba;
pub mod mvba;
pub mod dabc;
pub mod txorder;
pub mod simnet;
pub mod scenario;
pub mod verify;
pub mod oracles;
pub mod harness;

mod support;

pub use support::SupportTracker;
pub use topology::SupportGrade;

/// Errors surfaced by the protocol stack and the simulator.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("scheduling error: {0}")]
    Scheduling(String),
    #[error("index collision on {0}")]
    IndexCollision(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
