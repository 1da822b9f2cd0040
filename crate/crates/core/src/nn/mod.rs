//! Layer-stack networks with exact gradients for both parameters and inputs.
//!
//! A [`Model`] is built from an [`Architecture`] and a seed. [`Model::forward`]
//! returns logits together with a [`ForwardCache`]; passing the cache to
//! [`Model::backward`] yields parameter and input gradients. The cache is moved
//! into `backward`, so each cache serves exactly one backward call, and it is
//! rejected if the parameters changed since it was produced.

pub mod arch;
pub mod conv;
pub mod gradcheck;
mod layers;
pub mod loss;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use arch::{Architecture, LayerSpec};
pub use conv::conv2d;
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use loss::{argmax, confidence_mask, cross_entropy, per_example_losses, softmax_row};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use layers::{Init, Layer, MaskSource, Op, RunningStats, Saved};

/// How stochastic and batch-statistics layers behave during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Dropout masks are sampled; batchnorm uses batch statistics and updates its running averages.
    Train,
    /// Dropout is its expectation (identity under inverted scaling); batchnorm uses
    /// batch statistics and leaves running averages untouched.
    Simplify,
    /// No dropout; batchnorm uses running averages.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Dropout masks of one forward pass, one slot per dropout layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutMasks(pub(crate) Vec<Option<Vec<f64>>>);

pub struct ForwardCache {
    model_id: u64,
    version: u64,
    mode: Mode,
    input_shape: Vec<usize>,
    saved: Vec<Saved>,
    masks: DropoutMasks,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dropout_masks(&self) -> &DropoutMasks {
        &self.masks
    }
}

impl std::fmt::Debug for ForwardCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardCache")
            .field("mode", &self.mode)
            .field("input_shape", &self.input_shape)
            .field("layers", &self.saved.len())
            .finish()
    }
}

/// Gradients of a scalar loss: one tensor per parameter (same order as
/// [`Model::params`]) plus the gradient with respect to the forward input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

/// Snapshot of batchnorm running averages, keyed by layer index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningBuffer {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

pub struct Model {
    arch: Architecture,
    layers: Vec<Layer>,
    params: Vec<Param>,
    running: Vec<Option<RunningStats>>,
    rng_seed: u64,
    dropout_rng: ChaCha8Rng,
    id: u64,
    version: u64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            running: self.running.clone(),
            rng_seed: self.rng_seed,
            dropout_rng: self.dropout_rng.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("arch", &self.arch.name)
            .field("parameters", &self.parameter_count())
            .field("rng_seed", &self.rng_seed)
            .finish()
    }
}

impl Model {
    /// Builds the layer stack and draws weights from `U(-s, s)` with
    /// `s = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.input_shape.is_empty() || arch.input_shape.contains(&0) {
            return Err(Error::shape(format!(
                "invalid input shape {:?}",
                arch.input_shape
            )));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(1);

        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut params = Vec::new();
        let mut shape = arch.input_shape.clone();
        for (i, spec) in arch.layers.iter().enumerate() {
            let (layer, decls) = Layer::resolve(spec, &shape, params.len()).map_err(|e| e.at_layer(i))?;
            for decl in decls {
                let len: usize = decl.shape.iter().product();
                let values = match decl.init {
                    Init::Zeros => vec![0.0; len],
                    Init::Ones => vec![1.0; len],
                    Init::Uniform { fan_in, fan_out } => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let dist = Uniform::new_inclusive(-limit, limit).expect("finite init limit");
                        (0..len).map(|_| dist.sample(&mut init_rng)).collect()
                    }
                };
                params.push(Param {
                    name: format!("layer{i}.{}", decl.suffix),
                    value: Tensor::new(decl.shape, values)?,
                });
            }
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        if shape != [arch.classes] {
            return Err(Error::Shape {
                layer: arch.layers.len().checked_sub(1),
                message: format!(
                    "network output shape {shape:?} does not match {} classes",
                    arch.classes
                ),
            });
        }
        let running = layers.iter().map(Layer::running_stats).collect();
        Ok(Self {
            arch,
            layers,
            params,
            running,
            rng_seed: seed,
            dropout_rng,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input_shape
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Mutable access to the parameters. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Param] {
        self.version += 1;
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(|l| l.spec.kind()).collect()
    }

    pub fn running_buffers(&self) -> Vec<RunningBuffer> {
        self.running
            .iter()
            .enumerate()
            .filter_map(|(layer, r)| {
                r.as_ref().map(|r| RunningBuffer {
                    layer,
                    mean: r.mean.clone(),
                    var: r.var.clone(),
                })
            })
            .collect()
    }

    pub fn set_running_buffers(&mut self, buffers: &[RunningBuffer]) -> Result<()> {
        for b in buffers {
            match self.running.get_mut(b.layer) {
                Some(Some(r)) if r.mean.len() == b.mean.len() && r.var.len() == b.var.len() => {
                    r.mean.clone_from(&b.mean);
                    r.var.clone_from(&b.var);
                }
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "no matching batchnorm layer {} for running buffer",
                        b.layer
                    )))
                }
            }
        }
        Ok(())
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&mut self, params: &[Param]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (have, new) in self.params.iter().zip(params) {
            if have.name != new.name || !have.value.same_shape(&new.value) {
                return Err(Error::InvalidInput(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    new.name,
                    new.value.shape(),
                    have.name,
                    have.value.shape()
                )));
            }
        }
        self.params_mut().clone_from_slice(params);
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let shape = x.shape();
        if shape.len() < 2 || shape[1..] != self.arch.input_shape[..] {
            return Err(Error::Shape {
                layer: Some(0),
                message: format!(
                    "{} expects examples shaped {:?}, got batch {:?}",
                    self.layers.first().map_or("model", |l| l.spec.kind()),
                    self.arch.input_shape,
                    shape
                ),
            });
        }
        Ok(shape[0])
    }

    fn run(
        &self,
        x: &Tensor,
        mode: Mode,
        mut masks: MaskSource<'_>,
        save: bool,
    ) -> Result<(Tensor, Vec<Saved>, DropoutMasks, Vec<(usize, Vec<f64>, Vec<f64>)>)> {
        let batch = self.check_input(x)?;
        let mut values = x.data().to_vec();
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut used_masks = Vec::new();
        let mut stats = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(
                &self.params,
                self.running[i].as_ref(),
                batch,
                values,
                mode,
                &mut masks,
                used_masks.len(),
                save,
            )?;
            if let Op::Dropout { .. } = layer.op {
                used_masks.push(match &out.saved {
                    Saved::Dropout(m) => m.clone(),
                    _ => None,
                });
            }
            if out.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("output of layer {i} ({})", layer.spec.kind()),
                });
            }
            if let Some((mean, var)) = out.batch_stats {
                stats.push((i, mean, var));
            }
            values = out.values;
            saved.push(out.saved);
        }
        let logits = Tensor::new(vec![batch, self.arch.classes], values)?;
        Ok((logits, saved, DropoutMasks(used_masks), stats))
    }

    fn cache(&self, x: &Tensor, mode: Mode, saved: Vec<Saved>, masks: DropoutMasks) -> ForwardCache {
        ForwardCache {
            model_id: self.id,
            version: self.version,
            mode,
            input_shape: x.shape().to_vec(),
            saved,
            masks,
        }
    }

    /// Forward pass in any mode. Train mode samples dropout masks from the
    /// model's own generator and updates batchnorm running averages.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        if mode != Mode::Train {
            return self.forward_inference(x, mode);
        }
        let mut rng = self.dropout_rng.clone();
        let (logits, saved, masks, stats) = self.run(x, mode, MaskSource::Sample(&mut rng), true)?;
        self.dropout_rng = rng;
        for (layer, mean, var) in stats {
            let Op::BatchNorm { momentum, spatial, .. } = self.layers[layer].op else {
                unreachable!("batch statistics only come from batchnorm layers");
            };
            let m = (x.rows() * spatial) as f64;
            let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let r = self.running[layer].as_mut().expect("batchnorm running stats");
            for f in 0..mean.len() {
                r.mean[f] = (1.0 - momentum) * r.mean[f] + momentum * mean[f];
                r.var[f] = (1.0 - momentum) * r.var[f] + momentum * var[f] * correction;
            }
        }
        Ok((logits, self.cache(x, mode, saved, masks)))
    }

    /// Forward pass in `Simplify` or `Eval` mode; never mutates the model.
    pub fn forward_inference(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        if mode == Mode::Train {
            return Err(Error::ContractViolation(
                "train mode needs `forward` (mutable) or `forward_replay`".into(),
            ));
        }
        let (logits, saved, masks, _) = self.run(x, mode, MaskSource::Off, true)?;
        Ok((logits, self.cache(x, mode, saved, masks)))
    }

    /// Train-mode forward pass reusing recorded dropout masks. Running
    /// averages are not updated.
    pub fn forward_replay(&self, x: &Tensor, masks: &DropoutMasks) -> Result<(Tensor, ForwardCache)> {
        let (logits, saved, masks, _) = self.run(x, Mode::Train, MaskSource::Replay(&masks.0), true)?;
        Ok((logits, self.cache(x, Mode::Train, saved, masks)))
    }

    /// Eval-mode logits without keeping a cache.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, Mode::Eval, MaskSource::Off, false)?.0)
    }

    pub(crate) fn logits_with(&self, x: &Tensor, mode: Mode, masks: &DropoutMasks) -> Result<Tensor> {
        let source = match mode {
            Mode::Train => MaskSource::Replay(&masks.0),
            _ => MaskSource::Off,
        };
        Ok(self.run(x, mode, source, false)?.0)
    }

    fn check_cache(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<usize> {
        if cache.model_id != self.id {
            return Err(Error::ContractViolation(
                "forward cache was produced by a different model".into(),
            ));
        }
        if cache.version != self.version {
            return Err(Error::ContractViolation(
                "parameters changed since the forward pass that produced this cache".into(),
            ));
        }
        let batch = cache.input_shape[0];
        if grad_logits.shape() != [batch, self.arch.classes] {
            return Err(Error::shape(format!(
                "logit gradient shaped {:?}, expected [{batch}, {}]",
                grad_logits.shape(),
                self.arch.classes
            )));
        }
        Ok(batch)
    }

    fn propagate(&self, cache: ForwardCache, grad_logits: &Tensor, mut param_grads: Option<&mut [Tensor]>) -> Result<Tensor> {
        let batch = self.check_cache(&cache, grad_logits)?;
        let mut grad = grad_logits.data().to_vec();
        for (layer, saved) in self.layers.iter().zip(cache.saved).rev() {
            grad = layer.backward(&self.params, batch, saved, grad, param_grads.as_deref_mut())?;
        }
        Tensor::new(cache.input_shape, grad)
    }

    /// Exact gradients of `sum(grad_logits * logits)` with respect to every
    /// parameter and to the forward input.
    pub fn backward(&self, cache: ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        let mut params: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let input = self.propagate(cache, grad_logits, Some(&mut params))?;
        Ok(Gradients { params, input })
    }

    /// Input gradient only; skips the parameter-gradient work.
    pub fn backward_input(&self, cache: ForwardCache, grad_logits: &Tensor) -> Result<Tensor> {
        self.propagate(cache, grad_logits, None)
    }
}

#[cfg(test)]
mod tests;
