//! Local update rules: momentum SGD with weight decay, optional layer-wise
//! learning-rate scaling by the weight/gradient norm ratio, linear warmup,
//! and gradient accumulation for large-batch emulation.

use crate::error::{SimError, SimResult};
use crate::gossip::WorkerState;
use crate::model::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    /// Momentum factor in `[0, 1)`.
    pub momentum: f64,
    pub weight_decay: f64,
    /// Layer-wise scaling coefficient; `None` disables scaling.
    pub lars_coeff: Option<f64>,
    /// Linear warmup length in epochs; 0 disables the ramp.
    pub warmup_epochs: usize,
    /// Gradient accumulations between communication rounds.
    pub comm_interval: usize,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.05,
            momentum: 0.96,
            weight_decay: 5e-5,
            lars_coeff: Some(0.0025),
            warmup_epochs: 0,
            comm_interval: 1,
            epsilon: 1e-9,
        }
    }
}

/// Layer-wise learning-rate scale from the weight/gradient norm ratio:
/// `coeff * |w| / (|g| + weight_decay * |w| + epsilon)`. Falls back to 1
/// when either norm is zero or scaling is disabled.
pub fn lars_local_lr(weight_norm: f64, grad_norm: f64, cfg: &OptimizerConfig) -> f64 {
    let coeff = match cfg.lars_coeff {
        Some(c) => c,
        None => return 1.0,
    };
    if weight_norm == 0.0 || grad_norm == 0.0 {
        return 1.0;
    }
    coeff * weight_norm / (grad_norm + cfg.weight_decay * weight_norm + cfg.epsilon)
}

/// Linear warmup: `base_lr * min(1, (epoch + 1) / warmup_epochs)`, constant
/// `base_lr` once the ramp completes or when warmup is disabled.
pub fn warmup_lr(epoch: f64, cfg: &OptimizerConfig) -> f64 {
    if cfg.warmup_epochs == 0 {
        return cfg.base_lr;
    }
    cfg.base_lr * ((epoch + 1.0) / cfg.warmup_epochs as f64).min(1.0)
}

fn slice_l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-layer scale factors for one step; all ones unless scaling is enabled.
pub fn layer_scales(params: &ParamVector, grads: &ParamVector, cfg: &OptimizerConfig) -> Vec<f64> {
    let layers = params.layout.num_layers();
    if cfg.lars_coeff.is_none() {
        return vec![1.0; layers];
    }
    (0..layers)
        .map(|l| lars_local_lr(slice_l2(params.layer(l)), slice_l2(grads.layer(l)), cfg))
        .collect()
}

/// One momentum-SGD step, per layer `l`:
/// `m <- momentum * m + (g + weight_decay * w)`,
/// `w <- w - lr(epoch) * scale[l] * m`.
pub fn sgd_momentum_step(
    params: &mut ParamVector,
    momentum: &mut ParamVector,
    grads: &ParamVector,
    per_layer_scales: &[f64],
    cfg: &OptimizerConfig,
    epoch: f64,
) -> SimResult<()> {
    if !params.same_layout(grads) || !params.same_layout(momentum) {
        return Err(SimError::CorruptState(
            "optimizer buffers disagree on layout".into(),
        ));
    }
    if per_layer_scales.len() != params.layout.num_layers() {
        return Err(SimError::CorruptState(format!(
            "{} layer scales for {} layers",
            per_layer_scales.len(),
            params.layout.num_layers()
        )));
    }
    if grads.values.iter().any(|g| !g.is_finite()) {
        return Err(SimError::Diverged("non-finite gradient".into()));
    }

    let lr = warmup_lr(epoch, cfg);
    let layout = params.layout.clone();
    for (l, &scale) in per_layer_scales.iter().enumerate() {
        let step = lr * scale;
        for j in layout.layer_range(l) {
            let g = grads.values[j] + cfg.weight_decay * params.values[j];
            momentum.values[j] = cfg.momentum * momentum.values[j] + g;
            params.values[j] -= step * momentum.values[j];
        }
    }
    Ok(())
}

/// Convenience: derive layer scales from the worker's current weights, then
/// step its parameter and momentum buffers in place.
pub fn apply_local_step(
    state: &mut WorkerState,
    grad: &ParamVector,
    cfg: &OptimizerConfig,
    epoch: f64,
) -> SimResult<()> {
    let scales = layer_scales(&state.params, grad, cfg);
    sgd_momentum_step(
        &mut state.params,
        &mut state.momentum,
        grad,
        &scales,
        cfg,
        epoch,
    )
}

/// Adds `grad` to the worker's accumulator. Once `comm_interval` gradients
/// are in, returns their arithmetic mean and resets the accumulator;
/// otherwise returns `None`.
pub fn accumulate_and_flush(
    state: &mut WorkerState,
    grad: &ParamVector,
    cfg: &OptimizerConfig,
) -> SimResult<Option<ParamVector>> {
    if !state.grad_accumulator.same_layout(grad) {
        return Err(SimError::CorruptState(
            "gradient does not match accumulator layout".into(),
        ));
    }
    for (acc, g) in state.grad_accumulator.values.iter_mut().zip(&grad.values) {
        *acc += g;
    }
    state.accum_count += 1;
    if state.accum_count < cfg.comm_interval {
        return Ok(None);
    }
    let scale = 1.0 / cfg.comm_interval as f64;
    let mean = ParamVector {
        values: state
            .grad_accumulator
            .values
            .iter()
            .map(|v| v * scale)
            .collect(),
        layout: state.grad_accumulator.layout.clone(),
    };
    state.grad_accumulator.values.fill(0.0);
    state.accum_count = 0;
    Ok(Some(mean))
}
