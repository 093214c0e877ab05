//! Run configuration: the protocol switch, simulation sizes, optimizer
//! hyperparameters, and the link model, with a flat `key=value` file format
//! and full validation that names the offending key.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{SimError, SimResult};
use crate::harness::LinkModel;
use crate::model::{synthetic_layers, ModelLayout};
use crate::optim::OptimizerConfig;

/// Communication protocol driven by the round loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Crossover,
    HierCrossover,
    SgpPushsum,
    Ring,
    Allreduce,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Crossover,
        Method::HierCrossover,
        Method::SgpPushsum,
        Method::Ring,
        Method::Allreduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Crossover => "crossover",
            Method::HierCrossover => "hier-crossover",
            Method::SgpPushsum => "sgp-pushsum",
            Method::Ring => "ring",
            Method::Allreduce => "allreduce",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> SimResult<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SimError::InvalidConfig {
                key: "method".into(),
                reason: format!(
                    "unknown method {s:?}; expected one of crossover, hier-crossover, sgp-pushsum, ring, allreduce"
                ),
            })
    }
}

/// Reference constants for the large-batch training regime this simulator
/// models at desk scale, plus the two link presets.
pub mod presets {
    use crate::harness::LinkModel;

    /// Learning rate used by the reference large-batch recipe. Only
    /// meaningful with layer-wise scaling on a full-size model; simulation
    /// defaults use task-scaled rates instead.
    pub const LARGE_BATCH_LR: f64 = 9.0;
    pub const LARGE_BATCH_MOMENTUM: f64 = 0.96;
    pub const LARGE_BATCH_WEIGHT_DECAY: f64 = 5e-5;
    pub const LARGE_BATCH_LARS_COEFF: f64 = 0.0025;
    pub const LARGE_BATCH_WARMUP_EPOCHS: usize = 36;
    pub const LARGE_BATCH_TRAINING_EPOCHS: usize = 90;
    pub const LARGE_BATCH_COMM_INTERVAL: usize = 42;

    /// HPC cluster interconnect: 56,000 Mb/s, microsecond-class latency.
    pub const CLUSTER_LINK: LinkModel = LinkModel {
        latency: 5e-6,
        bandwidth: 56_000e6 / 8.0,
        element_size: 4,
        topo_overhead: 0.0,
    };

    /// Cloud instance networking: up to 3,125 Mb/s, ~0.1 ms latency.
    pub const CLOUD_LINK: LinkModel = LinkModel {
        latency: 1e-4,
        bandwidth: 3_125e6 / 8.0,
        element_size: 4,
        topo_overhead: 0.0,
    };
}

/// Complete description of one simulation run. Field names double as config
/// file keys and (with a `--` prefix) CLI flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    /// Simulated worker count.
    pub workers: usize,
    /// Communication segments the model is fused into.
    pub segments: usize,
    /// Simulation rounds; communication happens every `comm_interval`-th.
    pub rounds: u64,
    /// Master seed; the only entropy source anywhere.
    pub seed: u64,
    /// Workers per group for hier-crossover (upper bound; sizes balance).
    pub group_size: usize,
    /// Model size in elements.
    pub dim: usize,
    /// Synthetic layer count the model is split into.
    pub layers: usize,
    /// Gradient accumulations per communication round.
    pub comm_interval: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Layer-wise scaling coefficient; 0 disables scaling.
    pub lars_coeff: f64,
    pub warmup_epochs: usize,
    /// Simulation rounds that make up one epoch for the warmup schedule.
    pub rounds_per_epoch: u64,
    pub epsilon: f64,
    /// Link latency per message, seconds.
    pub latency: f64,
    /// Link bandwidth, bytes per second.
    pub bandwidth: f64,
    /// Wire size of one element in bytes (2, 4, or 8).
    pub element_size: usize,
    /// Topology-computation surcharge per segment, seconds.
    pub topo_overhead: f64,
    pub output_path: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Crossover,
            workers: 8,
            segments: 4,
            rounds: 200,
            seed: 42,
            group_size: 4,
            dim: 64,
            layers: 8,
            comm_interval: 1,
            lr: 0.05,
            momentum: presets::LARGE_BATCH_MOMENTUM,
            weight_decay: presets::LARGE_BATCH_WEIGHT_DECAY,
            lars_coeff: presets::LARGE_BATCH_LARS_COEFF,
            warmup_epochs: 0,
            rounds_per_epoch: 100,
            epsilon: 1e-9,
            latency: presets::CLOUD_LINK.latency,
            bandwidth: presets::CLOUD_LINK.bandwidth,
            element_size: presets::CLOUD_LINK.element_size,
            topo_overhead: 0.0,
            output_path: PathBuf::from("metrics.csv"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> SimResult<T> {
    value.trim().parse().map_err(|_| SimError::InvalidConfig {
        key: key.into(),
        reason: format!("cannot parse value {value:?}"),
    })
}

impl RunConfig {
    /// Applies one `key=value` assignment. Unknown keys are rejected.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> SimResult<()> {
        match key {
            "method" => self.method = value.trim().parse()?,
            "workers" => self.workers = parse_value(key, value)?,
            "segments" => self.segments = parse_value(key, value)?,
            "rounds" => self.rounds = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "group_size" => self.group_size = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "comm_interval" => self.comm_interval = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "lars_coeff" => self.lars_coeff = parse_value(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, value)?,
            "rounds_per_epoch" => self.rounds_per_epoch = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "latency" => self.latency = parse_value(key, value)?,
            "bandwidth" => self.bandwidth = parse_value(key, value)?,
            "element_size" => self.element_size = parse_value(key, value)?,
            "topo_overhead" => self.topo_overhead = parse_value(key, value)?,
            "output_path" => self.output_path = PathBuf::from(value.trim()),
            _ => {
                return Err(SimError::InvalidConfig {
                    key: key.into(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Parses a flat config file: one `key=value` per line, `#` comments and
    /// blank lines ignored.
    pub fn apply_config_text(&mut self, text: &str) -> SimResult<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SimError::InvalidConfig {
                    key: format!("line {}", lineno + 1),
                    reason: format!("expected key=value, got {line:?}"),
                })?;
            self.apply_kv(key.trim(), value)?;
        }
        Ok(())
    }

    /// Enforces every module-level precondition up front so a validated
    /// config cannot fail downstream for shape reasons.
    pub fn validate(&self) -> SimResult<()> {
        let fail = |key: &str, reason: String| -> SimResult<()> {
            Err(SimError::InvalidConfig {
                key: key.into(),
                reason,
            })
        };

        if self.workers < 2 {
            return fail(
                "workers",
                format!("need at least 2 workers, got {}", self.workers),
            );
        }
        if self.method == Method::SgpPushsum && !self.workers.is_power_of_two() {
            return fail(
                "workers",
                format!(
                    "sgp-pushsum runs on a directed exponential graph and requires a power-of-two worker count, got {}",
                    self.workers
                ),
            );
        }
        if self.dim == 0 {
            return fail("dim", "model must have at least 1 element".into());
        }
        if self.layers == 0 || self.layers > self.dim {
            return fail(
                "layers",
                format!(
                    "layers must be in 1..={} (dim), got {}",
                    self.dim, self.layers
                ),
            );
        }
        if self.segments == 0 || self.segments > self.layers {
            return fail(
                "segments",
                format!(
                    "segments must be in 1..={} (layers), got {}",
                    self.layers, self.segments
                ),
            );
        }
        if self.method == Method::HierCrossover
            && (self.group_size == 0 || self.group_size > self.workers)
        {
            return fail(
                "group_size",
                format!(
                    "group_size must be in 1..={} (workers), got {}",
                    self.workers, self.group_size
                ),
            );
        }
        if self.comm_interval == 0 {
            return fail("comm_interval", "must be at least 1".into());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return fail(
                "lr",
                format!("must be positive and finite, got {}", self.lr),
            );
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(
                "momentum",
                format!("must be in [0, 1), got {}", self.momentum),
            );
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return fail(
                "weight_decay",
                format!("must be nonnegative, got {}", self.weight_decay),
            );
        }
        if !self.lars_coeff.is_finite() || self.lars_coeff < 0.0 {
            return fail(
                "lars_coeff",
                format!("must be nonnegative, got {}", self.lars_coeff),
            );
        }
        if self.rounds_per_epoch == 0 {
            return fail("rounds_per_epoch", "must be at least 1".into());
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return fail(
                "epsilon",
                format!("must be nonnegative, got {}", self.epsilon),
            );
        }
        if !self.latency.is_finite() || self.latency < 0.0 {
            return fail(
                "latency",
                format!("must be nonnegative, got {}", self.latency),
            );
        }
        if !self.bandwidth.is_finite() || self.bandwidth <= 0.0 {
            return fail(
                "bandwidth",
                format!("must be positive, got {}", self.bandwidth),
            );
        }
        if ![2usize, 4, 8].contains(&self.element_size) {
            return fail(
                "element_size",
                format!("must be one of 2, 4, 8, got {}", self.element_size),
            );
        }
        if !self.topo_overhead.is_finite() || self.topo_overhead < 0.0 {
            return fail(
                "topo_overhead",
                format!("must be nonnegative, got {}", self.topo_overhead),
            );
        }
        if self.output_path.as_os_str().is_empty() {
            return fail("output_path", "must not be empty".into());
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            base_lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lars_coeff: (self.lars_coeff > 0.0).then_some(self.lars_coeff),
            warmup_epochs: self.warmup_epochs,
            comm_interval: self.comm_interval,
            epsilon: self.epsilon,
        }
    }

    pub fn link_model(&self) -> LinkModel {
        LinkModel {
            latency: self.latency,
            bandwidth: self.bandwidth,
            element_size: self.element_size,
            topo_overhead: self.topo_overhead,
        }
    }

    pub fn model_layout(&self) -> SimResult<Arc<ModelLayout>> {
        ModelLayout::new(synthetic_layers(self.dim, self.layers)?)
    }
}
