//! Deterministic simulated cluster: synthetic quadratic tasks with a known
//! optimum, the round loop combining local optimizer steps with a chosen
//! protocol, and a communication cost model producing simulated wall-clock.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{allreduce_average, pushsum_round, ring_round, PushSumPair};
use crate::config::{Method, RunConfig};
use crate::error::{SimError, SimResult};
use crate::gossip::{crossover_round, plan_round, rms_from_mean, WorkerState};
use crate::hierarchy::{build_groups, hierarchical_round};
use crate::metrics::MetricsRecord;
use crate::model::{build_segment_plan, synthetic_layers, ModelLayout, ParamVector};
use crate::optim::{accumulate_and_flush, apply_local_step, layer_scales, sgd_momentum_step};
use crate::topology::derive_seed;

// Reserved stream ids, far above any real round index.
const TASK_STREAM: u64 = 1 << 62;
const INIT_STREAM: u64 = (1 << 62) + 1;

/// Point-to-point link parameters for the cost model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    /// Seconds per message.
    pub latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Wire bytes per parameter element (2, 4, or 8).
    pub element_size: usize,
    /// Seconds charged per segment for computing the random topology.
    pub topo_overhead: f64,
}

/// Heterogeneous diagonal quadratic: worker `i` owns
/// `f_i(x) = 1/2 * sum_j d_i[j] * (x[j] - a_i[j])^2`, so workers pull toward
/// different targets and gossip delay shows up in the global loss. The
/// global optimum of the mean objective is known in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    targets: Vec<ParamVector>,
    scales: Vec<ParamVector>,
}

impl QuadraticTask {
    /// Deterministic task: targets uniform in [-1, 1), curvature scales
    /// uniform in [0.5, 2).
    pub fn generate(seed: u64, workers: usize, layout: &Arc<ModelLayout>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = layout.total_len();
        let mut targets = Vec::with_capacity(workers);
        let mut scales = Vec::with_capacity(workers);
        for _ in 0..workers {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
            targets.push(ParamVector {
                values: a,
                layout: Arc::clone(layout),
            });
            scales.push(ParamVector {
                values: d,
                layout: Arc::clone(layout),
            });
        }
        QuadraticTask { targets, scales }
    }

    pub fn num_workers(&self) -> usize {
        self.targets.len()
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.targets[0].layout
    }

    /// Gradient of worker `rank`'s local objective: `d_i ⊙ (x - a_i)`.
    pub fn gradient(&self, rank: usize, x: &ParamVector) -> SimResult<ParamVector> {
        if rank >= self.num_workers() {
            return Err(SimError::InvalidInput(format!(
                "rank {rank} out of range for {} workers",
                self.num_workers()
            )));
        }
        let a = &self.targets[rank];
        let d = &self.scales[rank];
        let values = x
            .values
            .iter()
            .zip(&a.values)
            .zip(&d.values)
            .map(|((x, a), d)| d * (x - a))
            .collect();
        Ok(ParamVector {
            values,
            layout: x.layout.clone(),
        })
    }

    pub fn local_objective(&self, rank: usize, x: &ParamVector) -> f64 {
        let a = &self.targets[rank];
        let d = &self.scales[rank];
        0.5 * x
            .values
            .iter()
            .zip(&a.values)
            .zip(&d.values)
            .map(|((x, a), d)| d * (x - a) * (x - a))
            .sum::<f64>()
    }

    /// The mean objective over workers.
    pub fn objective(&self, x: &ParamVector) -> f64 {
        (0..self.num_workers())
            .map(|i| self.local_objective(i, x))
            .sum::<f64>()
            / self.num_workers() as f64
    }

    /// Closed-form minimizer of the mean objective:
    /// `x*[j] = sum_i d_i[j] a_i[j] / sum_i d_i[j]`.
    pub fn global_optimum(&self) -> ParamVector {
        let layout = self.layout().clone();
        let dim = layout.total_len();
        let mut values = vec![0.0; dim];
        for (j, out) in values.iter_mut().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, d) in self.targets.iter().zip(&self.scales) {
                num += d.values[j] * a.values[j];
                den += d.values[j];
            }
            *out = num / den;
        }
        ParamVector { values, layout }
    }
}

fn ring_allreduce_time(world: usize, model_bytes: u64, link: &LinkModel) -> f64 {
    if world < 2 {
        return 0.0;
    }
    let n = world as f64;
    2.0 * (n - 1.0) * link.latency + 2.0 * ((n - 1.0) / n) * model_bytes as f64 / link.bandwidth
}

fn gossip_time(model_bytes: u64, segment_count: usize, link: &LinkModel) -> f64 {
    // overlapped segments share the link: one latency, whole-model transfer,
    // plus the per-segment topology surcharge
    link.latency + model_bytes as f64 / link.bandwidth + link.topo_overhead * segment_count as f64
}

/// Simulated wall-clock of one communication round. Only the slowest link
/// is charged (synchronous round abstraction).
pub fn simulate_round_time(
    method: Method,
    model_bytes: u64,
    segment_count: usize,
    world_size: usize,
    group_size: usize,
    link: &LinkModel,
) -> SimResult<f64> {
    if model_bytes == 0 {
        return Err(SimError::InvalidInput(
            "model_bytes must be positive".into(),
        ));
    }
    if world_size < 2 {
        return Err(SimError::InvalidWorld(world_size));
    }
    let transfer = model_bytes as f64 / link.bandwidth;
    Ok(match method {
        Method::Allreduce => ring_allreduce_time(world_size, model_bytes, link),
        Method::Crossover => gossip_time(model_bytes, segment_count, link),
        Method::SgpPushsum | Method::Ring => link.latency + transfer,
        Method::HierCrossover => {
            if group_size == 0 || group_size > world_size {
                return Err(SimError::InvalidGroup(format!(
                    "group size {group_size} invalid for world size {world_size}"
                )));
            }
            let num_groups = world_size.div_ceil(group_size);
            let base = world_size / num_groups;
            let extra = world_size % num_groups;
            let max_group = base + usize::from(extra > 0);
            let leader_gossip = if num_groups >= 2 {
                gossip_time(model_bytes, segment_count, link)
            } else {
                0.0
            };
            // intra-group reduce + leader gossip + one broadcast transfer
            ring_allreduce_time(max_group, model_bytes, link)
                + leader_gossip
                + link.latency
                + transfer
        }
    })
}

fn ring_allreduce_bytes(world: usize, model_bytes: u64) -> u64 {
    if world < 2 {
        return 0;
    }
    ((2 * (world as u128 - 1) * model_bytes as u128) / world as u128) as u64
}

/// Bytes sent per worker in one communication round; returns (max, min)
/// across workers.
fn round_bytes(method: Method, model_bytes: u64, world: usize, group_size: usize) -> (u64, u64) {
    match method {
        Method::Crossover | Method::SgpPushsum => (model_bytes, model_bytes),
        Method::Ring => (2 * model_bytes, 2 * model_bytes),
        Method::Allreduce => {
            let b = ring_allreduce_bytes(world, model_bytes);
            (b, b)
        }
        Method::HierCrossover => {
            let layout = build_groups(world, group_size).expect("validated group size");
            let num_groups = layout.num_groups();
            let mut max = 0u64;
            let mut min = u64::MAX;
            for group in layout.groups() {
                let share = ring_allreduce_bytes(group.len(), model_bytes);
                // members send their allreduce share; the leader additionally
                // gossips one model and broadcasts to each member
                let leader = share
                    + if num_groups >= 2 { model_bytes } else { 0 }
                    + (group.len() as u64 - 1) * model_bytes;
                max = max.max(leader.max(share));
                min = min.min(if group.len() > 1 {
                    share.min(leader)
                } else {
                    leader
                });
            }
            (max, min)
        }
    }
}

/// The model a worker would evaluate gradients at: raw parameters, except
/// for push-sum where the de-biased estimate is the model.
fn model_view(state: &WorkerState, method: Method) -> ParamVector {
    match method {
        Method::SgpPushsum => ParamVector {
            values: state
                .params
                .values
                .iter()
                .map(|v| v / state.pushsum_weight)
                .collect(),
            layout: state.params.layout.clone(),
        },
        _ => state.params.clone(),
    }
}

/// The synthetic task a given config trains on; exposed so callers can
/// compare run output against the task's closed-form optimum.
pub fn training_task(cfg: &RunConfig) -> SimResult<QuadraticTask> {
    let layout = cfg.model_layout()?;
    Ok(QuadraticTask::generate(
        derive_seed(cfg.seed, TASK_STREAM, 0),
        cfg.workers,
        &layout,
    ))
}

/// Runs the full round loop, streaming one [`MetricsRecord`] per
/// communication round into `sink`. Metrics already emitted stay emitted if
/// a later round diverges, so callers get partial output on failure.
pub fn train_with<F>(cfg: &RunConfig, mut sink: F) -> SimResult<()>
where
    F: FnMut(&MetricsRecord) -> SimResult<()>,
{
    cfg.validate()?;
    let plan = build_segment_plan(&synthetic_layers(cfg.dim, cfg.layers)?, cfg.segments)?;
    let layout = Arc::clone(plan.layout());
    let opt = cfg.optimizer_config();
    let link = cfg.link_model();
    let task = QuadraticTask::generate(derive_seed(cfg.seed, TASK_STREAM, 0), cfg.workers, &layout);

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM, 0));
    let mut states: Vec<WorkerState> = (0..cfg.workers)
        .map(|rank| {
            let values: Vec<f64> = (0..cfg.dim)
                .map(|_| init_rng.random_range(-1.0..1.0))
                .collect();
            WorkerState::new(
                rank,
                ParamVector {
                    values,
                    layout: Arc::clone(&layout),
                },
            )
        })
        .collect();

    let model_bytes = (cfg.dim * cfg.element_size) as u64;
    let mut sim_time = 0.0f64;
    let mut comm_round = 0u64;

    for round in 1..=cfg.rounds {
        let epoch = ((round - 1) / cfg.rounds_per_epoch) as f64;

        let mut flushed: Vec<Option<ParamVector>> = Vec::with_capacity(cfg.workers);
        for state in states.iter_mut() {
            let grad = task.gradient(state.rank, &model_view(state, cfg.method))?;
            flushed.push(accumulate_and_flush(state, &grad, &opt)?);
        }
        if flushed[0].is_none() {
            continue; // accumulating; all workers flush in lockstep
        }
        debug_assert!(flushed.iter().all(Option::is_some));
        let grads: Vec<ParamVector> = flushed.into_iter().flatten().collect();

        let step_err = |e: SimError| match e {
            SimError::Diverged(msg) => SimError::Diverged(format!("round {round}: {msg}")),
            other => other,
        };

        match cfg.method {
            Method::Crossover => {
                for (state, grad) in states.iter_mut().zip(&grads) {
                    apply_local_step(state, grad, &opt, epoch).map_err(step_err)?;
                }
                let rp = plan_round(cfg.workers, &plan, comm_round, cfg.seed)?;
                states = crossover_round(&states, &plan, &rp)?;
            }
            Method::Allreduce => {
                for (state, grad) in states.iter_mut().zip(&grads) {
                    apply_local_step(state, grad, &opt, epoch).map_err(step_err)?;
                }
                states = allreduce_average(&states)?;
            }
            Method::Ring => {
                for (state, grad) in states.iter_mut().zip(&grads) {
                    apply_local_step(state, grad, &opt, epoch).map_err(step_err)?;
                }
                states = ring_round(&states)?;
            }
            Method::SgpPushsum => {
                // step the de-biased model, then re-bias and gossip the mass
                for (state, grad) in states.iter_mut().zip(&grads) {
                    let weight = state.pushsum_weight;
                    let mut debiased = model_view(state, Method::SgpPushsum);
                    let scales = layer_scales(&debiased, grad, &opt);
                    sgd_momentum_step(
                        &mut debiased,
                        &mut state.momentum,
                        grad,
                        &scales,
                        &opt,
                        epoch,
                    )
                    .map_err(step_err)?;
                    for (p, z) in state.params.values.iter_mut().zip(&debiased.values) {
                        *p = z * weight;
                    }
                }
                let pairs: Vec<PushSumPair> = states
                    .iter()
                    .map(|s| PushSumPair::new(s.params.clone(), s.pushsum_weight))
                    .collect::<SimResult<_>>()?;
                let merged = pushsum_round(&pairs, comm_round)?;
                for (state, pair) in states.iter_mut().zip(merged) {
                    state.params = pair.value;
                    state.pushsum_weight = pair.weight;
                }
            }
            Method::HierCrossover => {
                let groups = build_groups(cfg.workers, cfg.group_size)?;
                states = hierarchical_round(
                    &states, &grads, &groups, &plan, comm_round, cfg.seed, &opt, epoch,
                )
                .map_err(step_err)?;
            }
        }

        sim_time += simulate_round_time(
            cfg.method,
            model_bytes,
            cfg.segments,
            cfg.workers,
            cfg.group_size,
            &link,
        )?;
        let (bytes_max, bytes_min) =
            round_bytes(cfg.method, model_bytes, cfg.workers, cfg.group_size);

        let models: Vec<ParamVector> = states.iter().map(|s| model_view(s, cfg.method)).collect();
        let dim = layout.total_len();
        let mut mean = vec![0.0; dim];
        for m in &models {
            for (acc, v) in mean.iter_mut().zip(&m.values) {
                *acc += v / cfg.workers as f64;
            }
        }
        let rows: Vec<&[f64]> = models.iter().map(|m| m.values.as_slice()).collect();
        let record = MetricsRecord {
            round,
            sim_time_s: sim_time,
            global_loss: task.objective(&ParamVector {
                values: mean,
                layout: Arc::clone(&layout),
            }),
            consensus_distance: rms_from_mean(&rows),
            bytes_max,
            bytes_min,
        };
        comm_round += 1;
        sink(&record)?;
    }
    Ok(())
}

/// Convenience wrapper collecting all records in memory.
pub fn train(cfg: &RunConfig) -> SimResult<Vec<MetricsRecord>> {
    let mut records = Vec::new();
    train_with(cfg, |rec| {
        records.push(rec.clone());
        Ok(())
    })?;
    Ok(records)
}
