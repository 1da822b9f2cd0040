//! Adam for network parameters and fixed-rate gradient descent for the
//! perturbation buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("adam.alpha", "must be a positive finite number"));
        }
        for (field, beta) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("adam.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam state, one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Param], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// One Adam update: `w -= alpha * m_hat / (sqrt(v_hat) + epsilon)`.
    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::InvalidInput(format!(
                "adam got {} parameters and {} gradients for {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if !p.value.same_shape(g) || !p.value.same_shape(m) {
                return Err(Error::InvalidInput(format!(
                    "gradient for `{}` shaped {:?}, parameter shaped {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let w = p.value.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                w[j] -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent on the perturbation rows with a fixed rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaOptimizer {
    eta: f64,
}

impl DeltaOptimizer {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config("eta", "must be a positive finite number"));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn step(&self, delta: &mut Tensor, delta_grad: &mut Tensor, freeze_mask: &[bool]) -> Result<()> {
        delta_step(delta, delta_grad, self.eta, freeze_mask)
    }
}

/// `delta -= eta * delta_grad` after zeroing the gradient rows of frozen examples.
///
/// The gradient tensor is modified in place by the masking.
pub fn delta_step(delta: &mut Tensor, delta_grad: &mut Tensor, eta: f64, freeze_mask: &[bool]) -> Result<()> {
    if !delta.same_shape(delta_grad) {
        return Err(Error::shape(format!(
            "perturbation {:?} and gradient {:?} differ in shape",
            delta.shape(),
            delta_grad.shape()
        )));
    }
    if freeze_mask.len() != delta.rows() {
        return Err(Error::shape(format!(
            "freeze mask has {} entries for {} rows",
            freeze_mask.len(),
            delta.rows()
        )));
    }
    for (i, &frozen) in freeze_mask.iter().enumerate() {
        if frozen {
            delta_grad.row_mut(i).fill(0.0);
        }
    }
    for (d, g) in delta.data_mut().iter_mut().zip(delta_grad.data()) {
        *d -= eta * g;
    }
    Ok(())
}
