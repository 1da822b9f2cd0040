use crate::error::{Error, Result};
use crate::nn::{confidence_mask, cross_entropy, Mode, Model};
use crate::optim::delta_step;
use crate::tensor::Tensor;

/// The shared perturbation matrix, one row per mini-batch slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBuffer {
    delta: Tensor,
    freeze_mask: Vec<bool>,
}

impl PerturbationBuffer {
    /// `b` zero rows, each shaped like one model input.
    pub fn new(batch_size: usize, example_shape: &[usize]) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        let mut shape = vec![batch_size];
        shape.extend_from_slice(example_shape);
        Ok(Self {
            delta: Tensor::zeros(&shape),
            freeze_mask: vec![false; batch_size],
        })
    }

    pub fn delta(&self) -> &Tensor {
        &self.delta
    }

    pub fn freeze_mask(&self) -> &[bool] {
        &self.freeze_mask
    }

    pub fn capacity(&self) -> usize {
        self.delta.rows()
    }

    pub fn reset(&mut self) {
        self.delta.data_mut().fill(0.0);
        self.freeze_mask.fill(false);
    }

    pub fn is_zero(&self) -> bool {
        self.delta.data().iter().all(|&v| v == 0.0)
    }

    pub fn frozen_fraction(&self, active: usize) -> f64 {
        if active == 0 {
            return 0.0;
        }
        self.freeze_mask[..active].iter().filter(|&&f| f).count() as f64 / active as f64
    }
}

/// Result of one inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplified {
    pub x_tilde: Tensor,
    pub delta: Tensor,
    /// Fraction of rows frozen at the last inner step (0 when no step ran).
    pub frozen_fraction: f64,
    /// Loss at the perturbed input seen by each inner step, before its update.
    pub inner_losses: Vec<f64>,
}

/// `x + delta`, keeping `x` bitwise wherever the perturbation is exactly zero.
pub fn perturb(x: &Tensor, delta: &Tensor) -> Result<Tensor> {
    if !x.same_shape(delta) {
        return Err(Error::shape(format!(
            "input {:?} and perturbation {:?} differ in shape",
            x.shape(),
            delta.shape()
        )));
    }
    let mut out = x.clone();
    for (o, &d) in out.data_mut().iter_mut().zip(delta.data()) {
        if d != 0.0 {
            *o += d;
        }
    }
    Ok(out)
}

/// Runs `tau` descent steps on a zero-initialized perturbation of `x`.
///
/// Each step evaluates the model in simplify mode on `x + delta`, recomputes
/// which rows are confidently correct at threshold `c`, and moves only the
/// remaining rows against the input gradient of the mean batch loss.
pub fn simplify_batch(model: &Model, x: &Tensor, labels: &[usize], tau: usize, eta: f64, c: f64) -> Result<Simplified> {
    let mut buffer = PerturbationBuffer::new(x.rows(), &x.shape()[1..])?;
    simplify_into(&mut buffer, model, x, labels, tau, eta, c)
}

/// Same as [`simplify_batch`] but working in a caller-owned buffer whose
/// capacity may exceed the batch: rows past `x.rows()` stay frozen at zero.
pub fn simplify_into(
    buffer: &mut PerturbationBuffer,
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    tau: usize,
    eta: f64,
    c: f64,
) -> Result<Simplified> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::config("eta", "must be a positive finite number"));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::config("confidence_threshold", "must lie in (0, 1]"));
    }
    let n = x.rows();
    if n > buffer.capacity() || x.shape()[1..] != buffer.delta.shape()[1..] {
        return Err(Error::shape(format!(
            "batch {:?} does not fit perturbation buffer {:?}",
            x.shape(),
            buffer.delta.shape()
        )));
    }
    buffer.reset();
    if !buffer.is_zero() {
        return Err(Error::ContractViolation("perturbation buffer not zero after reset".into()));
    }
    for frozen in &mut buffer.freeze_mask[n..] {
        *frozen = true;
    }
    let rows: Vec<usize> = (0..n).collect();
    let mut delta = buffer.delta.select_rows(&rows)?;
    let mut inner_losses = Vec::with_capacity(tau);
    for step in 1..=tau {
        let xp = perturb(x, &delta)?;
        let (logits, cache) = model.forward_inference(&xp, Mode::Simplify)?;
        let (loss, grad_logits) = cross_entropy(&logits, labels)?;
        let mask = confidence_mask(&logits, labels, c)?;
        let mut grad = model.backward_input(cache, &grad_logits)?;
        delta_step(&mut delta, &mut grad, eta, &mask)?;
        delta.ensure_finite(|| format!("perturbation after inner step {step}"))?;
        buffer.freeze_mask[..n].copy_from_slice(&mask);
        inner_losses.push(loss);
    }
    let width = delta.row_len();
    buffer.delta.data_mut()[..n * width].copy_from_slice(delta.data());
    let frozen_fraction = if tau == 0 { 0.0 } else { buffer.frozen_fraction(n) };
    Ok(Simplified {
        x_tilde: perturb(x, &delta)?,
        delta,
        frozen_fraction,
        inner_losses,
    })
}
