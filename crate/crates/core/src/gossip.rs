//! One segment-wise gossip round: fresh destination draws per segment and
//! pairwise averaging of each segment against the sender's pre-round
//! snapshot.

use crate::error::{SimError, SimResult};
use crate::model::{flatten_tensors, unflatten_tensors, ParamVector, SegmentPlan};
use crate::topology::{derive_seed, init_roulettes, select_destinations, DestinationMap};

/// Full per-worker simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub rank: usize,
    pub params: ParamVector,
    pub momentum: ParamVector,
    pub grad_accumulator: ParamVector,
    pub accum_count: usize,
    /// Mass carried by push-sum style protocols; 1 for everything else.
    pub pushsum_weight: f64,
}

impl WorkerState {
    pub fn new(rank: usize, params: ParamVector) -> Self {
        let momentum = ParamVector::zeros(&params.layout);
        let grad_accumulator = ParamVector::zeros(&params.layout);
        WorkerState {
            rank,
            params,
            momentum,
            grad_accumulator,
            accum_count: 0,
            pushsum_weight: 1.0,
        }
    }
}

/// Destination maps for every segment of one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: u64,
    pub per_segment_maps: Vec<DestinationMap>,
}

/// Draws one destination map per segment from seeds derived off
/// `(base_seed, round, segment)`. Identical output on every caller.
pub fn plan_round(
    world_size: usize,
    plan: &SegmentPlan,
    round: u64,
    base_seed: u64,
) -> SimResult<RoundPlan> {
    let roulettes = init_roulettes(world_size)?;
    let per_segment_maps = (0..plan.num_segments())
        .map(|k| {
            select_destinations(
                derive_seed(base_seed, round, k as u64),
                world_size,
                &roulettes,
            )
        })
        .collect::<SimResult<Vec<_>>>()?;
    Ok(RoundPlan {
        round,
        per_segment_maps,
    })
}

pub(crate) fn check_shared_layout(states: &[WorkerState]) -> SimResult<()> {
    let first = match states.first() {
        Some(s) => s,
        None => return Err(SimError::InvalidInput("no worker states".into())),
    };
    for s in states {
        if !s.params.same_layout(&first.params) {
            return Err(SimError::CorruptState(format!(
                "worker {} does not share the common layout",
                s.rank
            )));
        }
        if !s.params.same_layout(&s.momentum) || !s.params.same_layout(&s.grad_accumulator) {
            return Err(SimError::CorruptState(format!(
                "worker {} buffers disagree on layout",
                s.rank
            )));
        }
    }
    Ok(())
}

/// Executes one gossip round. For each segment `k`: every worker fuses the
/// segment into one flat buffer, the buffers travel along that segment's
/// destination map, and each receiver unfuses the incoming buffer and
/// merges it layer by layer as `(own + received) / 2`. All sends read the
/// pre-round snapshot, so the round is a pure function regardless of
/// message ordering. Momentum and accumulator buffers are untouched.
pub fn crossover_round(
    states: &[WorkerState],
    plan: &SegmentPlan,
    round_plan: &RoundPlan,
) -> SimResult<Vec<WorkerState>> {
    check_shared_layout(states)?;
    let n = states.len();
    if states[0].params.len() != plan.layout().total_len() {
        return Err(SimError::CorruptState(
            "worker layout does not match the segment plan".into(),
        ));
    }
    if round_plan.per_segment_maps.len() != plan.num_segments() {
        return Err(SimError::CorruptState(format!(
            "round plan has {} maps for {} segments",
            round_plan.per_segment_maps.len(),
            plan.num_segments()
        )));
    }
    for map in &round_plan.per_segment_maps {
        if map.world_size() != n {
            return Err(SimError::CorruptState(format!(
                "destination map world size {} does not match {} workers",
                map.world_size(),
                n
            )));
        }
    }

    let mut out = states.to_vec();
    for (k, map) in round_plan.per_segment_maps.iter().enumerate() {
        // snapshot sends: everyone fuses its segment before anyone merges
        let sent = states
            .iter()
            .map(|s| flatten_tensors(&s.params, plan, k))
            .collect::<SimResult<Vec<_>>>()?;
        for (i, next) in out.iter_mut().enumerate() {
            let received = unflatten_tensors(&sent[map.sender_of(i)], plan)?;
            for (layer, received_layer) in plan.layer_range(k).zip(received) {
                let range = plan.layout().layer_range(layer);
                for (j, theirs) in range.zip(received_layer) {
                    next.params.values[j] = 0.5 * (states[i].params.values[j] + theirs);
                }
            }
        }
    }
    Ok(out)
}

/// Root-mean-square deviation of the rows from their coordinate-wise mean.
/// Computed shifted against row 0 so bit-identical rows give exactly 0.
pub(crate) fn rms_from_mean(rows: &[&[f64]]) -> f64 {
    let n = rows.len();
    let dim = rows[0].len();
    let mut total = 0.0;
    for j in 0..dim {
        let origin = rows[0][j];
        let mean = rows.iter().map(|r| r[j] - origin).sum::<f64>() / n as f64;
        total += rows
            .iter()
            .map(|r| (r[j] - origin - mean).powi(2))
            .sum::<f64>();
    }
    (total / n as f64).sqrt()
}

/// `sqrt((1/n) * sum_i ||x_i - mean||^2)`: how far worker parameters have
/// drifted apart.
pub fn consensus_distance(states: &[WorkerState]) -> SimResult<f64> {
    if states.is_empty() {
        return Err(SimError::InvalidInput("no worker states".into()));
    }
    check_shared_layout(states)?;
    let rows: Vec<&[f64]> = states.iter().map(|s| s.params.values.as_slice()).collect();
    Ok(rms_from_mean(&rows))
}
