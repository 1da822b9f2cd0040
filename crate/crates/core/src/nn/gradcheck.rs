//! Central finite-difference verification of analytic gradients.
//!
//! The checked scalar is the mean cross-entropy of the model's logits. Every
//! parameter coordinate and every input coordinate is perturbed by `±epsilon`,
//! and the error measure per coordinate is
//! `|analytic - numeric| / max(1, |analytic| + |numeric|)`.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::loss::cross_entropy;
use super::{Architecture, DropoutMasks, Gradients, LayerSpec, Mode, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Finite-difference step used by the standard suite.
pub const EPSILON: f64 = 1e-5;
/// A coordinate fails when its relative error reaches this value.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_param_error: f64,
    pub max_input_error: f64,
    /// Parameter name (or `"input"`) and flat index of the worst coordinate.
    pub worst: (String, usize),
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs() + numeric.abs())
}

/// Analytic gradients of the mean cross-entropy through [`Model::backward`].
pub fn analytic_gradients(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    mode: Mode,
    masks: &DropoutMasks,
) -> Result<Gradients> {
    let (logits, cache) = match mode {
        Mode::Train => model.forward_replay(x, masks)?,
        _ => model.forward_inference(x, mode)?,
    };
    let (_, grad_logits) = cross_entropy(&logits, labels)?;
    model.backward(cache, &grad_logits)
}

/// Checks [`Model::backward`] against finite differences.
///
/// In `Train` mode one set of dropout masks is drawn from a copy of the model's
/// generator and held fixed for every evaluation.
pub fn grad_check(model: &Model, x: &Tensor, labels: &[usize], epsilon: f64, mode: Mode) -> Result<GradCheckReport> {
    grad_check_with(model, x, labels, epsilon, mode, analytic_gradients)
}

/// Same as [`grad_check`] with a caller-supplied analytic gradient routine.
pub fn grad_check_with<F>(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    epsilon: f64,
    mode: Mode,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Model, &Tensor, &[usize], Mode, &DropoutMasks) -> Result<Gradients>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let masks = match mode {
        Mode::Train => model.clone().forward(x, Mode::Train)?.1.dropout_masks().clone(),
        _ => DropoutMasks::default(),
    };
    let grads = analytic(model, x, labels, mode, &masks)?;
    if grads.params.len() != model.params().len() || !grads.input.same_shape(x) {
        return Err(Error::shape("analytic gradients do not match model/input shapes"));
    }

    let loss_at = |m: &Model, input: &Tensor| -> Result<f64> {
        let logits = m.logits_with(input, mode, &masks)?;
        Ok(cross_entropy(&logits, labels)?.0)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_param_error: 0.0,
        max_input_error: 0.0,
        worst: (String::new(), 0),
        coordinates: 0,
    };
    let note = |report: &mut GradCheckReport, name: &str, index: usize, err: f64, is_input: bool| {
        report.coordinates += 1;
        if is_input {
            report.max_input_error = report.max_input_error.max(err);
        } else {
            report.max_param_error = report.max_param_error.max(err);
        }
        if err > report.max_rel_error || report.worst.0.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = (name.to_owned(), index);
        }
    };

    let mut probe = model.clone();
    for (p, analytic_p) in grads.params.iter().enumerate() {
        let name = model.params()[p].name.clone();
        for j in 0..analytic_p.len() {
            let original = probe.params()[p].value.data()[j];
            probe.params_mut()[p].value.data_mut()[j] = original + epsilon;
            let plus = loss_at(&probe, x)?;
            probe.params_mut()[p].value.data_mut()[j] = original - epsilon;
            let minus = loss_at(&probe, x)?;
            probe.params_mut()[p].value.data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            note(&mut report, &name, j, relative_error(analytic_p.data()[j], numeric), false);
        }
    }

    let mut shifted = x.clone();
    for j in 0..x.len() {
        let original = x.data()[j];
        shifted.data_mut()[j] = original + epsilon;
        let plus = loss_at(model, &shifted)?;
        shifted.data_mut()[j] = original - epsilon;
        let minus = loss_at(model, &shifted)?;
        shifted.data_mut()[j] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        note(&mut report, "input", j, relative_error(grads.input.data()[j], numeric), true);
    }
    Ok(report)
}

/// A small network and batch shape used to exercise one layer kind or preset.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub name: String,
    pub architecture: Architecture,
    pub batch_shape: Vec<usize>,
}

fn case(name: &str, input: &[usize], classes: usize, batch: usize, layers: Vec<LayerSpec>) -> SuiteCase {
    let mut batch_shape = vec![batch];
    batch_shape.extend_from_slice(input);
    SuiteCase {
        name: name.to_owned(),
        architecture: Architecture {
            name: name.to_owned(),
            input_shape: input.to_vec(),
            classes,
            layers,
        },
        batch_shape,
    }
}

/// One tiny network per layer kind, each ending in a linear classifier.
pub fn layer_cases() -> Vec<SuiteCase> {
    let linear = |units| LayerSpec::Linear { units };
    let conv = |filters, kernel, stride, padding| LayerSpec::Conv2d {
        filters,
        kernel,
        stride,
        padding,
    };
    let bn = || LayerSpec::BatchNorm {
        momentum: 0.1,
        epsilon: 1e-5,
    };
    let image = [2, 5, 5];
    vec![
        case("linear", &[4], 3, 3, vec![linear(3)]),
        case(
            "conv2d",
            &image,
            3,
            2,
            vec![conv(3, 3, 1, 1), conv(2, 3, 2, 0), LayerSpec::Flatten, linear(3)],
        ),
        case(
            "maxpool2d",
            &image,
            3,
            2,
            vec![
                LayerSpec::MaxPool2d {
                    size: 2,
                    stride: Some(1),
                },
                LayerSpec::Flatten,
                linear(3),
            ],
        ),
        case("relu", &[4], 3, 3, vec![linear(6), LayerSpec::Relu, linear(3)]),
        case("tanh", &[4], 3, 3, vec![linear(6), LayerSpec::Tanh, linear(3)]),
        case(
            "batchnorm",
            &image,
            3,
            3,
            vec![conv(3, 3, 1, 1), bn(), LayerSpec::Flatten, linear(5), bn(), linear(3)],
        ),
        case(
            "dropout",
            &[4],
            3,
            3,
            vec![linear(8), LayerSpec::Dropout { p: 0.3 }, linear(3)],
        ),
        case("flatten", &image, 3, 2, vec![LayerSpec::Flatten, linear(3)]),
    ]
}

/// A tiny instance of a full architecture: batch of 2, and image inputs
/// larger than 12x12 shrunk to 12x12 when the layer stack allows it.
pub fn architecture_case(architecture: &Architecture) -> SuiteCase {
    let mut arch = architecture.clone();
    if let [c, h, w] = arch.input_shape[..] {
        if h > 12 || w > 12 {
            let small = arch.clone().with_input_shape(&[c, 12, 12]);
            if Model::new(small.clone(), 0).is_ok() {
                arch = small;
            }
        }
    }
    let mut batch_shape = vec![2];
    batch_shape.extend_from_slice(&arch.input_shape);
    SuiteCase {
        name: format!("{} (tiny)", architecture.name),
        architecture: arch,
        batch_shape,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub case: String,
    pub mode: Mode,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

/// Checks one case in train (frozen masks), simplify and eval mode.
///
/// Inputs are uniform in `[-1, 1)`; a train-mode pass runs first so that
/// batchnorm running statistics are not at their initial values.
pub fn run_case<F>(case: &SuiteCase, seed: u64, analytic: &F) -> Result<Vec<SuiteEntry>>
where
    F: Fn(&Model, &Tensor, &[usize], Mode, &DropoutMasks) -> Result<Gradients> + Sync,
{
    let mut model = Model::new(case.architecture.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let len = case.batch_shape.iter().product();
    let x = Tensor::new(
        case.batch_shape.clone(),
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let classes = case.architecture.classes;
    let labels: Vec<usize> = (0..case.batch_shape[0]).map(|i| i % classes).collect();
    model.forward(&x, Mode::Train)?;
    [Mode::Train, Mode::Simplify, Mode::Eval]
        .into_par_iter()
        .map(|mode| {
            Ok(SuiteEntry {
                case: case.name.clone(),
                mode,
                report: grad_check_with(&model, &x, &labels, EPSILON, mode, analytic)?,
            })
        })
        .collect()
}
