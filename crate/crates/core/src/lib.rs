//! Simulation library for decentralized parameter-averaging protocols.
//!
//! The centerpiece is segment-wise gossip: each round, every model segment
//! travels over its own freshly drawn load-balanced random topology (a
//! fixed-point-free permutation, so every worker sends and receives exactly
//! one message per segment) and is averaged pairwise into the receiver. The
//! library also ships the baselines this scheme is usually measured
//! against — exact allreduce, push-sum on a time-varying directed
//! exponential graph, three-point ring gossip — plus a two-level
//! hierarchical variant that reduces gradients onto group leaders before
//! gossiping between them.
//!
//! Everything runs on simulated workers driven by synthetic quadratic tasks
//! with closed-form optima, under a communication cost model that converts
//! protocol choice and link parameters into simulated wall-clock. All
//! randomness flows from explicit seeds; identical configurations produce
//! identical results.

pub mod baselines;
pub mod config;
pub mod error;
pub mod gossip;
pub mod harness;
pub mod hierarchy;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod topology;

pub use config::{Method, RunConfig};
pub use error::{SimError, SimResult};
pub use gossip::WorkerState;
pub use metrics::MetricsRecord;
pub use model::{ParamVector, SegmentPlan};
