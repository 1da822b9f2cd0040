//! Python bindings (`import friendly_training`).
//!
//! Batches cross the boundary as lists of rows, each row one flattened
//! example; anything iterable that yields float sequences (numpy arrays
//! included) is accepted.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use friendly_core::cli::{cmd_train, ExperimentConfig};
use friendly_core::curriculum::{self, Strategy};
use friendly_core::data::{self, Dataset};
use friendly_core::eval::{self, RunRecord};
use friendly_core::nn::{self, Architecture, ForwardCache, Mode};
use friendly_core::{Error, Tensor};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::NonFinite { .. } => PyArithmeticError::new_err(msg),
        Error::ContractViolation(_) => PyRuntimeError::new_err(msg),
        Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } | Error::Csv(_) => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for friendly_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "train" => Ok(Mode::Train),
        "simplify" => Ok(Mode::Simplify),
        "eval" => Ok(Mode::Eval),
        _ => Err(PyValueError::new_err(format!(
            "unknown mode {mode:?}, expected train, simplify or eval"
        ))),
    }
}

/// Rows of flattened examples, reshaped to `[n, example_shape..]`.
fn batch(rows: Vec<Vec<f64>>, example_shape: &[usize]) -> PyResult<Tensor> {
    let width: usize = example_shape.iter().product();
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != width {
            return Err(PyValueError::new_err(format!(
                "row {i} has {} values, expected {width}",
                row.len()
            )));
        }
        data.extend(row);
    }
    let mut shape = vec![n];
    shape.extend_from_slice(example_shape);
    Tensor::new(shape, data).py()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn dataset_parts(d: &Dataset) -> (Vec<Vec<f64>>, Vec<usize>) {
    (rows(d.features()), d.labels().to_vec())
}

/// Saved activations of one forward pass; consumed by exactly one backward.
#[pyclass(module = "friendly_training")]
pub struct Cache {
    inner: Option<ForwardCache>,
}

#[pymethods]
impl Cache {
    #[getter]
    fn consumed(&self) -> bool {
        self.inner.is_none()
    }

    fn __repr__(&self) -> String {
        match &self.inner {
            Some(c) => format!("Cache(mode={:?})", c.mode()),
            None => "Cache(consumed)".into(),
        }
    }
}

impl Cache {
    fn take(&mut self) -> PyResult<ForwardCache> {
        self.inner
            .take()
            .ok_or_else(|| PyRuntimeError::new_err("forward cache already consumed by a backward call"))
    }
}

#[pyclass(module = "friendly_training")]
pub struct Model {
    inner: nn::Model,
}

#[pymethods]
impl Model {
    /// `architecture` is a preset name or a path to a JSON descriptor.
    #[new]
    #[pyo3(signature = (architecture = "toy-moons", seed = 0))]
    fn new(architecture: &str, seed: u64) -> PyResult<Self> {
        let arch = Architecture::load(architecture).py()?;
        Ok(Self {
            inner: nn::Model::new(arch, seed).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, seed = 0))]
    fn from_json(text: &str, seed: u64) -> PyResult<Self> {
        let arch = Architecture::from_json(text).py()?;
        Ok(Self {
            inner: nn::Model::new(arch, seed).py()?,
        })
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn layer_kinds(&self) -> Vec<&'static str> {
        self.inner.layer_kinds()
    }

    /// `[(name, shape, values)]` in parameter order.
    fn params(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.inner
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec()))
            .collect()
    }

    /// Returns `(logits, cache)`.
    #[pyo3(signature = (x, mode = "eval"))]
    fn forward(&mut self, x: Vec<Vec<f64>>, mode: &str) -> PyResult<(Vec<Vec<f64>>, Cache)> {
        let x = batch(x, self.inner.input_shape())?;
        let (logits, cache) = self.inner.forward(&x, parse_mode(mode)?).py()?;
        Ok((rows(&logits), Cache { inner: Some(cache) }))
    }

    /// Returns `(param_grads, input_grad)`; param grads are flat, in parameter order.
    fn backward(&self, cache: &mut Cache, grad_logits: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let cache = cache.take()?;
        let g = batch(grad_logits, &[self.inner.classes()])?;
        let grads = self.inner.backward(cache, &g).py()?;
        Ok((grads.params.into_iter().map(Tensor::into_data).collect(), rows(&grads.input)))
    }

    fn backward_input(&self, cache: &mut Cache, grad_logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let cache = cache.take()?;
        let g = batch(grad_logits, &[self.inner.classes()])?;
        Ok(rows(&self.inner.backward_input(cache, &g).py()?))
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = batch(x, self.inner.input_shape())?;
        Ok(rows(&self.inner.predict(&x).py()?))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn labelled(model: &nn::Model, x: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Dataset> {
    let t = batch(x, &[model.input_shape().iter().product()])?;
    Dataset::new(t, labels, model.classes()).py()
}

#[pyfunction]
fn plan_tau(gamma: usize, tau1: usize, gamma_max_simp: usize) -> PyResult<usize> {
    curriculum::plan_tau(gamma, tau1, gamma_max_simp).py()
}

#[pyfunction]
fn plan_k(gamma: usize, b: usize, gamma_max_simp: usize) -> PyResult<usize> {
    curriculum::plan_k(gamma, b, gamma_max_simp).py()
}

/// Returns `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (n, noise_std = 0.2, seed = 0))]
fn two_moons(n: usize, noise_std: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    Ok(dataset_parts(&data::two_moons(n, noise_std, seed).py()?))
}

/// Returns `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (path, features = 784, limit = None))]
fn load_amat(path: &str, features: usize, limit: Option<usize>) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    Ok(dataset_parts(&data::load_amat_limited(path, features, limit).py()?))
}

/// Mean loss and its gradient with respect to the logits.
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let width = logits.first().map_or(0, Vec::len);
    let (loss, grad) = nn::cross_entropy(&batch(logits, &[width])?, &labels).py()?;
    Ok((loss, rows(&grad)))
}

#[pyfunction]
fn confidence_mask(logits: Vec<Vec<f64>>, labels: Vec<usize>, threshold: f64) -> PyResult<Vec<bool>> {
    let width = logits.first().map_or(0, Vec::len);
    nn::confidence_mask(&batch(logits, &[width])?, &labels, threshold).py()
}

#[pyfunction]
#[pyo3(signature = (model, x, labels, epsilon = 1e-5, mode = "eval"))]
fn grad_check<'py>(
    py: Python<'py>,
    model: &Model,
    x: Vec<Vec<f64>>,
    labels: Vec<usize>,
    epsilon: f64,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let x = batch(x, model.inner.input_shape())?;
    let r = nn::grad_check(&model.inner, &x, &labels, epsilon, parse_mode(mode)?).py()?;
    let d = PyDict::new(py);
    d.set_item("max_rel_error", r.max_rel_error)?;
    d.set_item("max_param_error", r.max_param_error)?;
    d.set_item("max_input_error", r.max_input_error)?;
    d.set_item("worst", r.worst)?;
    d.set_item("coordinates", r.coordinates)?;
    d.set_item("passed", r.max_rel_error < nn::gradcheck::TOLERANCE)?;
    Ok(d)
}

#[pyfunction]
fn error_rate(model: &Model, x: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    eval::error_rate(&model.inner, &labelled(&model.inner, x, labels)?).py()
}

/// Index of the earliest lowest validation error.
#[pyfunction]
fn select_best(validation_errors: Vec<f64>) -> PyResult<usize> {
    let history: Vec<RunRecord> = validation_errors
        .into_iter()
        .enumerate()
        .map(|(i, v)| RunRecord {
            epoch: i + 1,
            train_error: 0.0,
            validation_error: v,
            test_error: 0.0,
            mean_tau: 0.0,
            seconds: 0.0,
        })
        .collect();
    eval::select_best(&history).py()
}

/// Runs the inner loop; returns a dict with `x_tilde`, `delta`,
/// `frozen_fraction` and `inner_losses`.
#[pyfunction]
#[pyo3(signature = (model, x, labels, tau, eta = 1.0, c = 0.9))]
fn simplify_batch<'py>(
    py: Python<'py>,
    model: &Model,
    x: Vec<Vec<f64>>,
    labels: Vec<usize>,
    tau: usize,
    eta: f64,
    c: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let x = batch(x, model.inner.input_shape())?;
    let out = curriculum::simplify_batch(&model.inner, &x, &labels, tau, eta, c).py()?;
    let d = PyDict::new(py);
    d.set_item("x_tilde", rows(&out.x_tilde))?;
    d.set_item("delta", rows(&out.delta))?;
    d.set_item("frozen_fraction", out.frozen_fraction)?;
    d.set_item("inner_losses", out.inner_losses)?;
    Ok(d)
}

/// Same as `friendly train --config`: takes the config as a JSON string,
/// writes the usual artifacts and returns the per-seed summary.
#[pyfunction]
fn train<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_json(config_json).py()?;
    let summary = py.detach(|| cmd_train(&cfg)).py()?;
    let d = PyDict::new(py);
    let seeds: Vec<(u64, usize, f64)> = summary.rows.iter().map(|r| (r.seed, r.best_epoch, r.test_err)).collect();
    d.set_item("strategy", cfg.strategy.tag())?;
    d.set_item("runs", seeds)?;
    d.set_item("mean_validation_error", summary.mean_validation_error)?;
    d.set_item("mean_test_error", summary.mean_test_error)?;
    d.set_item("std_test_error", summary.std_test_error)?;
    d.set_item("output_dir", cfg.output_dir.display().to_string())?;
    Ok(d)
}

#[pyfunction]
fn strategies() -> Vec<&'static str> {
    [Strategy::Classic, Strategy::Friendly, Strategy::EasyFirst]
        .iter()
        .map(Strategy::tag)
        .collect()
}

#[pymodule]
fn friendly_training(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Cache>()?;
    m.add_function(wrap_pyfunction!(plan_tau, m)?)?;
    m.add_function(wrap_pyfunction!(plan_k, m)?)?;
    m.add_function(wrap_pyfunction!(two_moons, m)?)?;
    m.add_function(wrap_pyfunction!(load_amat, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_mask, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(select_best, m)?)?;
    m.add_function(wrap_pyfunction!(simplify_batch, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(strategies, m)?)?;
    Ok(())
}
