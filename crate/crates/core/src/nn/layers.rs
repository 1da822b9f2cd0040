use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::arch::LayerSpec;
use super::conv::{self, ConvGeom, PoolGeom};
use super::{Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A layer with its shapes resolved against the preceding layer's output.
#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub output_shape: Vec<usize>,
    pub op: Op,
    /// Index of the first parameter owned by this layer.
    pub first_param: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Linear { inputs: usize, outputs: usize },
    Conv(ConvGeom),
    MaxPool(PoolGeom),
    Relu,
    Tanh,
    BatchNorm { features: usize, spatial: usize, momentum: f64, epsilon: f64 },
    Dropout { p: f64 },
    Flatten,
}

/// Declared parameter: name suffix, shape, and whether it is initialized as a weight.
pub(crate) struct ParamDecl {
    pub suffix: &'static str,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Copy)]
pub(crate) enum Init {
    Uniform { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub(crate) struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug)]
pub(crate) enum Saved {
    Input(Vec<f64>),
    Argmax(Vec<usize>),
    ReluInput(Vec<f64>),
    TanhOutput(Vec<f64>),
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Dropout(Option<Vec<f64>>),
    Nothing,
}

pub(crate) enum MaskSource<'a> {
    Sample(&'a mut ChaCha8Rng),
    Replay(&'a [Option<Vec<f64>>]),
    Off,
}

pub(crate) struct LayerOutput {
    pub values: Vec<f64>,
    pub saved: Saved,
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl Layer {
    pub fn resolve(spec: &LayerSpec, input_shape: &[usize], first_param: usize) -> Result<(Self, Vec<ParamDecl>)> {
        spec.validate()?;
        let want_image = || -> Result<(usize, usize, usize)> {
            match *input_shape {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::shape(format!(
                    "{} expects a [c, h, w] input, got {input_shape:?}",
                    spec.kind()
                ))),
            }
        };
        let (op, output_shape, params) = match *spec {
            LayerSpec::Linear { units } => {
                let &[inputs] = input_shape else {
                    return Err(Error::shape(format!(
                        "linear expects a flat input, got {input_shape:?}"
                    )));
                };
                let params = vec![
                    ParamDecl {
                        suffix: "weight",
                        shape: vec![units, inputs],
                        init: Init::Uniform {
                            fan_in: inputs,
                            fan_out: units,
                        },
                    },
                    ParamDecl {
                        suffix: "bias",
                        shape: vec![units],
                        init: Init::Zeros,
                    },
                ];
                (
                    Op::Linear {
                        inputs,
                        outputs: units,
                    },
                    vec![units],
                    params,
                )
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = want_image()?;
                let geom = ConvGeom::new((c, h, w), (filters, kernel, kernel), stride, padding)?;
                let params = vec![
                    ParamDecl {
                        suffix: "weight",
                        shape: vec![filters, c, kernel, kernel],
                        init: Init::Uniform {
                            fan_in: c * kernel * kernel,
                            fan_out: filters * kernel * kernel,
                        },
                    },
                    ParamDecl {
                        suffix: "bias",
                        shape: vec![filters],
                        init: Init::Zeros,
                    },
                ];
                (Op::Conv(geom), vec![filters, geom.out_h, geom.out_w], params)
            }
            LayerSpec::MaxPool2d { size, stride } => {
                let (c, h, w) = want_image()?;
                let geom = PoolGeom::new((c, h, w), size, stride.unwrap_or(size))?;
                (Op::MaxPool(geom), vec![c, geom.out_h, geom.out_w], vec![])
            }
            LayerSpec::Relu => (Op::Relu, input_shape.to_vec(), vec![]),
            LayerSpec::Tanh => (Op::Tanh, input_shape.to_vec(), vec![]),
            LayerSpec::BatchNorm { momentum, epsilon } => {
                let features = input_shape[0];
                let spatial = input_shape[1..].iter().product();
                let params = vec![
                    ParamDecl {
                        suffix: "gamma",
                        shape: vec![features],
                        init: Init::Ones,
                    },
                    ParamDecl {
                        suffix: "beta",
                        shape: vec![features],
                        init: Init::Zeros,
                    },
                ];
                (
                    Op::BatchNorm {
                        features,
                        spatial,
                        momentum,
                        epsilon,
                    },
                    input_shape.to_vec(),
                    params,
                )
            }
            LayerSpec::Dropout { p } => (Op::Dropout { p }, input_shape.to_vec(), vec![]),
            LayerSpec::Flatten => (Op::Flatten, vec![input_shape.iter().product()], vec![]),
        };
        Ok((
            Self {
                spec: spec.clone(),
                output_shape,
                op,
                first_param,
            },
            params,
        ))
    }

    pub fn running_stats(&self) -> Option<RunningStats> {
        match self.op {
            Op::BatchNorm { features, .. } => Some(RunningStats {
                mean: vec![0.0; features],
                var: vec![1.0; features],
            }),
            _ => None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        params: &[Param],
        running: Option<&RunningStats>,
        batch: usize,
        x: Vec<f64>,
        mode: Mode,
        masks: &mut MaskSource<'_>,
        dropout_slot: usize,
        save: bool,
    ) -> Result<LayerOutput> {
        let p = |k: usize| params[self.first_param + k].value.data();
        let plain = |values: Vec<f64>, saved: Saved| LayerOutput {
            values,
            saved,
            batch_stats: None,
        };
        Ok(match self.op {
            Op::Linear { inputs, outputs } => {
                let (w, bias) = (p(0), p(1));
                let mut y = Vec::with_capacity(batch * outputs);
                for i in 0..batch {
                    let xi = &x[i * inputs..(i + 1) * inputs];
                    for o in 0..outputs {
                        let wo = &w[o * inputs..(o + 1) * inputs];
                        let dot: f64 = wo.iter().zip(xi).map(|(a, b)| a * b).sum();
                        y.push(dot + bias[o]);
                    }
                }
                plain(y, if save { Saved::Input(x) } else { Saved::Nothing })
            }
            Op::Conv(ref geom) => {
                let y = conv::forward(geom, batch, &x, p(0), p(1));
                plain(y, if save { Saved::Input(x) } else { Saved::Nothing })
            }
            Op::MaxPool(ref geom) => {
                let (y, argmax) = conv::maxpool_forward(geom, batch, &x);
                plain(y, if save { Saved::Argmax(argmax) } else { Saved::Nothing })
            }
            Op::Relu => {
                let y = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                plain(y, if save { Saved::ReluInput(x) } else { Saved::Nothing })
            }
            Op::Tanh => {
                let y: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
                let saved = if save {
                    Saved::TanhOutput(y.clone())
                } else {
                    Saved::Nothing
                };
                plain(y, saved)
            }
            Op::BatchNorm {
                features,
                spatial,
                epsilon,
                ..
            } => {
                let (gamma, beta) = (p(0), p(1));
                let m = (batch * spatial) as f64;
                let use_batch = matches!(mode, Mode::Train | Mode::Simplify);
                let (mean, var) = if use_batch {
                    let mut mean = vec![0.0; features];
                    let mut var = vec![0.0; features];
                    for n in 0..batch {
                        for f in 0..features {
                            let base = (n * features + f) * spatial;
                            mean[f] += x[base..base + spatial].iter().sum::<f64>();
                        }
                    }
                    mean.iter_mut().for_each(|v| *v /= m);
                    for n in 0..batch {
                        for f in 0..features {
                            let base = (n * features + f) * spatial;
                            var[f] += x[base..base + spatial]
                                .iter()
                                .map(|v| (v - mean[f]).powi(2))
                                .sum::<f64>();
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= m);
                    (mean, var)
                } else {
                    let stats = running.expect("batchnorm layer has running stats");
                    (stats.mean.clone(), stats.var.clone())
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
                let mut xhat = x;
                let mut y = vec![0.0; xhat.len()];
                for n in 0..batch {
                    for f in 0..features {
                        let base = (n * features + f) * spatial;
                        for s in base..base + spatial {
                            xhat[s] = (xhat[s] - mean[f]) * inv_std[f];
                            y[s] = gamma[f] * xhat[s] + beta[f];
                        }
                    }
                }
                LayerOutput {
                    values: y,
                    saved: if save {
                        Saved::BatchNorm {
                            xhat,
                            inv_std,
                            batch_stats: use_batch,
                        }
                    } else {
                        Saved::Nothing
                    },
                    batch_stats: (mode == Mode::Train).then_some((mean, var)),
                }
            }
            Op::Dropout { p: drop } => {
                if mode != Mode::Train {
                    return Ok(plain(x, Saved::Dropout(None)));
                }
                let mask = match masks {
                    MaskSource::Sample(rng) => {
                        let keep = 1.0 - drop;
                        (0..x.len())
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect::<Vec<f64>>()
                    }
                    MaskSource::Replay(stored) => match stored.get(dropout_slot) {
                        Some(Some(m)) if m.len() == x.len() => m.clone(),
                        _ => {
                            return Err(Error::ContractViolation(format!(
                                "no replay mask of length {} for dropout slot {dropout_slot}",
                                x.len()
                            )))
                        }
                    },
                    MaskSource::Off => {
                        return Err(Error::ContractViolation(
                            "train-mode dropout needs a mask source".into(),
                        ))
                    }
                };
                let y = x.iter().zip(&mask).map(|(a, m)| a * m).collect();
                plain(y, Saved::Dropout(Some(mask)))
            }
            Op::Flatten => plain(x, Saved::Nothing),
        })
    }

    /// Propagates `grad` to the layer input, writing parameter gradients into
    /// `param_grads` when it is provided.
    pub fn backward(
        &self,
        params: &[Param],
        batch: usize,
        saved: Saved,
        grad: Vec<f64>,
        param_grads: Option<&mut [Tensor]>,
    ) -> Result<Vec<f64>> {
        let p = |k: usize| params[self.first_param + k].value.data();
        let missing = || Error::ContractViolation(format!("cache lacks saved values for {}", self.spec.kind()));
        match (&self.op, saved) {
            (&Op::Linear { inputs, outputs }, Saved::Input(x)) => {
                let w = p(0);
                if let Some(pg) = param_grads {
                    let (dw, rest) = pg[self.first_param..].split_at_mut(1);
                    let (dw, db) = (dw[0].data_mut(), rest[0].data_mut());
                    for i in 0..batch {
                        let xi = &x[i * inputs..(i + 1) * inputs];
                        for o in 0..outputs {
                            let g = grad[i * outputs + o];
                            db[o] += g;
                            for (d, xv) in dw[o * inputs..(o + 1) * inputs].iter_mut().zip(xi) {
                                *d += g * xv;
                            }
                        }
                    }
                }
                let mut dx = vec![0.0; batch * inputs];
                for i in 0..batch {
                    let dxi = &mut dx[i * inputs..(i + 1) * inputs];
                    for o in 0..outputs {
                        let g = grad[i * outputs + o];
                        for (d, wv) in dxi.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                            *d += g * wv;
                        }
                    }
                }
                Ok(dx)
            }
            (Op::Conv(geom), Saved::Input(x)) => {
                if let Some(pg) = param_grads {
                    let (dk, db) = conv::backward_params(geom, batch, &grad, &x);
                    accumulate(&mut pg[self.first_param], &dk);
                    accumulate(&mut pg[self.first_param + 1], &db);
                }
                Ok(conv::backward_input(geom, batch, &grad, p(0)))
            }
            (Op::MaxPool(geom), Saved::Argmax(argmax)) => {
                Ok(conv::maxpool_backward(batch * geom.in_len(), &grad, &argmax))
            }
            (Op::Relu, Saved::ReluInput(x)) => Ok(grad
                .iter()
                .zip(&x)
                .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                .collect()),
            (Op::Tanh, Saved::TanhOutput(y)) => {
                Ok(grad.iter().zip(&y).map(|(g, t)| g * (1.0 - t * t)).collect())
            }
            (
                &Op::BatchNorm {
                    features, spatial, ..
                },
                Saved::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let gamma = p(0);
                let mut sum_g = vec![0.0; features];
                let mut sum_gx = vec![0.0; features];
                for n in 0..batch {
                    for f in 0..features {
                        let base = (n * features + f) * spatial;
                        for s in base..base + spatial {
                            sum_g[f] += grad[s];
                            sum_gx[f] += grad[s] * xhat[s];
                        }
                    }
                }
                if let Some(pg) = param_grads {
                    accumulate(&mut pg[self.first_param], &sum_gx);
                    accumulate(&mut pg[self.first_param + 1], &sum_g);
                }
                let m = (batch * spatial) as f64;
                let mut dx = vec![0.0; grad.len()];
                for n in 0..batch {
                    for f in 0..features {
                        let base = (n * features + f) * spatial;
                        let scale = gamma[f] * inv_std[f];
                        for s in base..base + spatial {
                            dx[s] = if batch_stats {
                                scale * (grad[s] - sum_g[f] / m - xhat[s] * sum_gx[f] / m)
                            } else {
                                scale * grad[s]
                            };
                        }
                    }
                }
                Ok(dx)
            }
            (Op::Dropout { .. }, Saved::Dropout(mask)) => Ok(match mask {
                Some(mask) => grad.iter().zip(&mask).map(|(g, m)| g * m).collect(),
                None => grad,
            }),
            (Op::Flatten, Saved::Nothing) => Ok(grad),
            _ => Err(missing()),
        }
    }
}

fn accumulate(target: &mut Tensor, values: &[f64]) {
    for (t, v) in target.data_mut().iter_mut().zip(values) {
        *t += v;
    }
}
