use serde::{Deserialize, Serialize};

use super::simplify::{simplify_into, PerturbationBuffer, Simplified};
use super::{Schedule, TrainerConfig};
use crate::error::Result;
use crate::nn::{cross_entropy, per_example_losses, Mode, Model};
use crate::optim::AdamState;
use crate::tensor::Tensor;

/// What one outer iteration did; one row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub gamma: usize,
    pub tau: usize,
    pub frozen_fraction: f64,
    pub batch_loss: f64,
    /// Examples used for the weight update.
    pub k: usize,
}

/// One train-mode forward/backward on `(x, labels)` followed by one Adam step.
fn weight_update(model: &mut Model, adam: &mut AdamState, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, cache) = model.forward(x, Mode::Train)?;
    let (loss, grad_logits) = cross_entropy(&logits, labels)?;
    let grads = model.backward(cache, &grad_logits)?;
    adam.step(model.params_mut(), &grads.params)?;
    Ok(loss)
}

/// Classic training: the unmodified mini-batch.
pub fn ct_step(model: &mut Model, adam: &mut AdamState, x: &Tensor, labels: &[usize], gamma: usize) -> Result<StepMetrics> {
    let batch_loss = weight_update(model, adam, x, labels)?;
    Ok(StepMetrics {
        gamma,
        tau: 0,
        frozen_fraction: 0.0,
        batch_loss,
        k: labels.len(),
    })
}

/// Friendly training: simplify the batch for `tau(gamma)` inner steps, then
/// update the weights on the simplified batch.
pub fn ft_step(
    model: &mut Model,
    adam: &mut AdamState,
    buffer: &mut PerturbationBuffer,
    x: &Tensor,
    labels: &[usize],
    schedule: &Schedule,
    config: &TrainerConfig,
) -> Result<(StepMetrics, Simplified)> {
    let tau = schedule.tau();
    let simplified = simplify_into(
        buffer,
        model,
        x,
        labels,
        tau,
        config.eta,
        config.confidence_threshold,
    )?;
    let batch_loss = weight_update(model, adam, &simplified.x_tilde, labels)?;
    let metrics = StepMetrics {
        gamma: schedule.gamma(),
        tau,
        frozen_fraction: simplified.frozen_fraction,
        batch_loss,
        k: labels.len(),
    };
    Ok((metrics, simplified))
}

/// Positions of the `k` smallest losses, ties to the lower index, returned in
/// ascending position order.
pub fn easiest(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Easy-examples-first: rank the batch by its eval-mode loss under the current
/// weights and update on the `plan_k(gamma)` easiest examples only.
pub fn eef_step(
    model: &mut Model,
    adam: &mut AdamState,
    x: &Tensor,
    labels: &[usize],
    schedule: &Schedule,
) -> Result<(StepMetrics, Vec<usize>)> {
    let b = labels.len();
    let k = schedule.k(b)?;
    let (batch_loss, selected) = if k >= b {
        (weight_update(model, adam, x, labels)?, (0..b).collect())
    } else {
        let losses = per_example_losses(&model.predict(x)?, labels)?;
        let selected = easiest(&losses, k);
        let sub_x = x.select_rows(&selected)?;
        let sub_y: Vec<usize> = selected.iter().map(|&i| labels[i]).collect();
        (weight_update(model, adam, &sub_x, &sub_y)?, selected)
    };
    let metrics = StepMetrics {
        gamma: schedule.gamma(),
        tau: 0,
        frozen_fraction: 0.0,
        batch_loss,
        k,
    };
    Ok((metrics, selected))
}
