//! Two-level communication: gradients reduced onto a leader inside each
//! group, gossip among the leaders, then the leader model broadcast back to
//! its group.

use crate::error::{SimError, SimResult};
use crate::gossip::{check_shared_layout, crossover_round, plan_round, WorkerState};
use crate::model::{ParamVector, SegmentPlan};
use crate::optim::{layer_scales, sgd_momentum_step, OptimizerConfig};

/// Partition of ranks into contiguous groups; the leader of a group is its
/// lowest rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    groups: Vec<Vec<usize>>,
}

impl GroupLayout {
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn world_size(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn leader_of(&self, group: usize) -> usize {
        self.groups[group][0]
    }

    /// Leaders in group order; the position of a leader here is its dense
    /// rank in the inter-group gossip.
    pub fn leaders(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g[0]).collect()
    }

    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Splits ranks into contiguous blocks of at most `group_size` ranks. The
/// block count is `ceil(world_size / group_size)` and sizes are balanced so
/// that no two groups differ by more than one rank.
pub fn build_groups(world_size: usize, group_size: usize) -> SimResult<GroupLayout> {
    if group_size == 0 {
        return Err(SimError::InvalidGroup(
            "group size must be at least 1".into(),
        ));
    }
    if world_size == 0 {
        return Err(SimError::InvalidGroup(
            "world size must be at least 1".into(),
        ));
    }
    if group_size > world_size {
        return Err(SimError::InvalidGroup(format!(
            "group size {group_size} exceeds world size {world_size}"
        )));
    }
    let num_groups = world_size.div_ceil(group_size);
    let base = world_size / num_groups;
    let extra = world_size % num_groups;
    let mut groups = Vec::with_capacity(num_groups);
    let mut next = 0usize;
    for g in 0..num_groups {
        let size = base + usize::from(g < extra);
        groups.push((next..next + size).collect());
        next += size;
    }
    Ok(GroupLayout { groups })
}

/// One hierarchical round, three phases in order:
/// 1. each leader averages its group's gradients and takes one local
///    optimizer step;
/// 2. leaders gossip among themselves (skipped with a single group), their
///    ranks remapped onto the dense leader index space;
/// 3. every member's parameters are overwritten by its leader's.
///
/// Non-leader momentum buffers are never touched; the optimizer state lives
/// at the leader.
#[allow(clippy::too_many_arguments)]
pub fn hierarchical_round(
    states: &[WorkerState],
    grads: &[ParamVector],
    layout: &GroupLayout,
    plan: &SegmentPlan,
    round: u64,
    base_seed: u64,
    cfg: &OptimizerConfig,
    epoch: f64,
) -> SimResult<Vec<WorkerState>> {
    check_shared_layout(states)?;
    if layout.world_size() != states.len() {
        return Err(SimError::InvalidGroup(format!(
            "group layout covers {} ranks, got {} workers",
            layout.world_size(),
            states.len()
        )));
    }
    if grads.len() != states.len() {
        return Err(SimError::CorruptState(format!(
            "{} gradients for {} workers",
            grads.len(),
            states.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.same_layout(&states[0].params) {
            return Err(SimError::CorruptState(format!(
                "gradient {i} does not share the common layout"
            )));
        }
    }

    let mut out = states.to_vec();

    // phase 1: group gradient reduction + leader step
    for group in layout.groups() {
        let leader = group[0];
        let mut mean = ParamVector::zeros(&grads[leader].layout);
        let scale = 1.0 / group.len() as f64;
        for &member in group {
            for (m, g) in mean.values.iter_mut().zip(&grads[member].values) {
                *m += g * scale;
            }
        }
        let scales = layer_scales(&out[leader].params, &mean, cfg);
        let state = &mut out[leader];
        sgd_momentum_step(
            &mut state.params,
            &mut state.momentum,
            &mean,
            &scales,
            cfg,
            epoch,
        )?;
    }

    // phase 2: inter-group gossip among leaders
    let leaders = layout.leaders();
    if leaders.len() >= 2 {
        let leader_states: Vec<WorkerState> = leaders
            .iter()
            .enumerate()
            .map(|(dense, &rank)| {
                let mut s = out[rank].clone();
                s.rank = dense;
                s
            })
            .collect();
        let round_plan = plan_round(leaders.len(), plan, round, base_seed)?;
        let merged = crossover_round(&leader_states, plan, &round_plan)?;
        for (dense, &rank) in leaders.iter().enumerate() {
            out[rank].params = merged[dense].params.clone();
        }
    }

    // phase 3: broadcast leader parameters inside each group
    for group in layout.groups() {
        let leader_params = out[group[0]].params.clone();
        for &member in &group[1..] {
            out[member].params = leader_params.clone();
        }
    }
    Ok(out)
}
