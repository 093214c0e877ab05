//! Reference protocols: exact allreduce averaging, push-sum over the
//! time-varying directed exponential graph, and three-point ring gossip.

use crate::error::{SimError, SimResult};
use crate::gossip::{check_shared_layout, WorkerState};
use crate::model::ParamVector;
use crate::topology::{exponential_peer, ring_neighbors};

/// Value/weight pair carried by push-sum; the de-biased model estimate is
/// `value / weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct PushSumPair {
    pub value: ParamVector,
    pub weight: f64,
}

impl PushSumPair {
    pub fn new(value: ParamVector, weight: f64) -> SimResult<Self> {
        if !weight.is_finite() || weight <= 0.0 {
            return Err(SimError::InvalidInput(format!(
                "push-sum weight must be positive and finite, got {weight}"
            )));
        }
        Ok(PushSumPair { value, weight })
    }

    /// De-biased estimate `value / weight`.
    pub fn estimate(&self) -> ParamVector {
        ParamVector {
            values: self.value.values.iter().map(|v| v / self.weight).collect(),
            layout: self.value.layout.clone(),
        }
    }
}

/// Every worker's parameters become the exact coordinate-wise mean of the
/// inputs. Momentum and accumulator buffers are untouched.
pub fn allreduce_average(states: &[WorkerState]) -> SimResult<Vec<WorkerState>> {
    check_shared_layout(states)?;
    let n = states.len() as f64;
    let dim = states[0].params.len();
    // mean accumulated shifted against worker 0 so consensus inputs come
    // back bit-identical
    let origin = states[0].params.values.clone();
    let mut mean = vec![0.0; dim];
    for s in states {
        for ((m, v), o) in mean.iter_mut().zip(&s.params.values).zip(&origin) {
            *m += v - o;
        }
    }
    for (m, o) in mean.iter_mut().zip(&origin) {
        *m = o + *m / n;
    }
    let mut out = states.to_vec();
    for s in &mut out {
        s.params.values.clone_from(&mean);
    }
    Ok(out)
}

/// One push-sum round on the directed exponential graph: each worker keeps
/// half of its (value, weight) mass and pushes the other half to its peer
/// for this round. Total value and total weight are conserved exactly.
pub fn pushsum_round(pairs: &[PushSumPair], round: u64) -> SimResult<Vec<PushSumPair>> {
    let n = pairs.len();
    if n < 2 {
        return Err(SimError::InvalidWorld(n));
    }
    for (i, p) in pairs.iter().enumerate() {
        if !p.weight.is_finite() || p.weight <= 0.0 {
            return Err(SimError::CorruptState(format!(
                "worker {i} has non-positive push-sum weight {}",
                p.weight
            )));
        }
        if !p.value.same_layout(&pairs[0].value) {
            return Err(SimError::CorruptState(format!(
                "worker {i} does not share the common layout"
            )));
        }
    }

    // keep half locally...
    let mut out: Vec<PushSumPair> = pairs
        .iter()
        .map(|p| PushSumPair {
            value: ParamVector {
                values: p.value.values.iter().map(|v| 0.5 * v).collect(),
                layout: p.value.layout.clone(),
            },
            weight: 0.5 * p.weight,
        })
        .collect();
    // ...and push the other half along the graph
    for (i, p) in pairs.iter().enumerate() {
        let peer = exponential_peer(i, round, n)?;
        for (acc, v) in out[peer].value.values.iter_mut().zip(&p.value.values) {
            *acc += 0.5 * v;
        }
        out[peer].weight += 0.5 * p.weight;
    }
    Ok(out)
}

/// One ring-gossip round: uniform three-point stencil over the pre-round
/// snapshot, `x_i' = (x_{i-1} + x_i + x_{i+1}) / 3`. With two workers the
/// neighbors coincide, giving `(x_i + 2 x_other) / 3`.
pub fn ring_round(states: &[WorkerState]) -> SimResult<Vec<WorkerState>> {
    check_shared_layout(states)?;
    let n = states.len();
    if n < 2 {
        return Err(SimError::InvalidWorld(n));
    }
    let mut out = states.to_vec();
    for (i, next) in out.iter_mut().enumerate() {
        let (left, right) = ring_neighbors(i, n)?;
        for j in 0..next.params.len() {
            next.params.values[j] = (states[left].params.values[j]
                + states[i].params.values[j]
                + states[right].params.values[j])
                / 3.0;
        }
    }
    Ok(out)
}
