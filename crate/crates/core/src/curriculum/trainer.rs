use std::time::Instant;

use super::simplify::{PerturbationBuffer, Simplified};
use super::steps::{ct_step, eef_step, ft_step, StepMetrics};
use super::{Schedule, Strategy, TrainerConfig};
use crate::data::{batch_iter, Dataset, Splits};
use crate::error::{Error, Result};
use crate::eval::{error_rate, ModelSnapshot, RunRecord};
use crate::nn::Model;
use crate::optim::AdamState;
use crate::tensor::Tensor;

/// Everything one outer iteration produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub metrics: StepMetrics,
    /// Friendly training only.
    pub simplified: Option<Simplified>,
    /// Easy-examples-first only: batch positions used for the update.
    pub selected: Option<Vec<usize>>,
}

/// Owns the optimizer state, the perturbation buffer and the iteration counter
/// for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainerConfig,
    gamma: usize,
    gamma_max: usize,
    plan: Option<Schedule>,
    adam: AdamState,
    buffer: PerturbationBuffer,
}

impl Trainer {
    pub fn new(model: &Model, config: TrainerConfig, gamma_max: usize) -> Result<Self> {
        config.validate()?;
        let plan = if config.strategy.uses_plan() {
            Some(Schedule::from_fraction(gamma_max, config.gamma_max_simp_fraction, config.tau1)?)
        } else {
            None
        };
        Ok(Self {
            adam: AdamState::new(model.params(), config.adam),
            buffer: PerturbationBuffer::new(config.batch_size, model.input_shape())?,
            config,
            gamma: 1,
            gamma_max,
            plan,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    /// The iteration the next call to [`Trainer::step`] will run.
    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn gamma_max(&self) -> usize {
        self.gamma_max
    }

    pub fn schedule(&self) -> Option<&Schedule> {
        self.plan.as_ref()
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn step(&mut self, model: &mut Model, x: &Tensor, labels: &[usize]) -> Result<StepOutcome> {
        if self.gamma > self.gamma_max {
            return Err(Error::ContractViolation(format!(
                "iteration {} exceeds gamma_max = {}",
                self.gamma, self.gamma_max
            )));
        }
        if labels.len() > self.config.batch_size {
            return Err(Error::shape(format!(
                "batch of {} exceeds batch_size {}",
                labels.len(),
                self.config.batch_size
            )));
        }
        let outcome = match (self.config.strategy, self.plan.as_ref()) {
            (Strategy::Friendly, Some(plan)) => {
                let (metrics, simplified) =
                    ft_step(model, &mut self.adam, &mut self.buffer, x, labels, plan, &self.config)?;
                StepOutcome {
                    metrics,
                    simplified: Some(simplified),
                    selected: None,
                }
            }
            (Strategy::EasyFirst, Some(plan)) => {
                let (metrics, selected) = eef_step(model, &mut self.adam, x, labels, plan)?;
                StepOutcome {
                    metrics,
                    simplified: None,
                    selected: Some(selected),
                }
            }
            _ => StepOutcome {
                metrics: ct_step(model, &mut self.adam, x, labels, self.gamma)?,
                simplified: None,
                selected: None,
            },
        };
        self.gamma += 1;
        if let Some(plan) = self.plan.as_mut() {
            if plan.gamma() < plan.gamma_max() {
                plan.advance()?;
            }
        }
        Ok(outcome)
    }
}

/// Inputs, perturbation and simplified inputs of one captured mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDump {
    pub epoch: usize,
    pub gamma: usize,
    pub x: Tensor,
    pub delta: Tensor,
    pub x_tilde: Tensor,
}

#[derive(Debug)]
pub struct TrainReport {
    pub history: Vec<RunRecord>,
    pub trace: Vec<StepMetrics>,
    pub dumps: Vec<PerturbationDump>,
    pub gamma_max: usize,
    pub gamma_max_simp: Option<usize>,
    /// Model after the epoch with the lowest validation error (earliest on ties).
    pub best: Option<ModelSnapshot>,
    /// Set when the run stopped early; `history` then holds the completed epochs.
    pub failure: Option<Error>,
}

impl TrainReport {
    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

fn check_compatible(model: &Model, data: &Dataset, name: &str) -> Result<()> {
    let expected: usize = model.input_shape().iter().product();
    if data.dim() != expected {
        return Err(Error::shape(format!(
            "{name} examples have {} features, model input {:?} needs {expected}",
            data.dim(),
            model.input_shape()
        )));
    }
    if data.classes() != model.classes() {
        return Err(Error::InvalidInput(format!(
            "{name} split has {} classes, model predicts {}",
            data.classes(),
            model.classes()
        )));
    }
    Ok(())
}

/// Runs `config.epochs` epochs of the configured strategy and records the
/// train / validation / test error after each epoch.
///
/// Configuration and compatibility problems are returned as errors before any
/// work starts. Failures during training are reported in
/// [`TrainReport::failure`] together with the history of completed epochs.
pub fn train(model: &mut Model, splits: &Splits, config: &TrainerConfig) -> Result<TrainReport> {
    train_with(model, splits, config, |_, _| {})
}

/// [`train`] with a callback invoked after every outer iteration.
pub fn train_with<F>(model: &mut Model, splits: &Splits, config: &TrainerConfig, mut observe: F) -> Result<TrainReport>
where
    F: FnMut(&Model, &StepOutcome),
{
    config.validate()?;
    for (name, data) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        check_compatible(model, data, name)?;
    }
    let batches_per_epoch = splits.train.len().div_ceil(config.batch_size);
    let gamma_max = config.epochs * batches_per_epoch;
    let mut report = TrainReport {
        history: Vec::new(),
        trace: Vec::new(),
        dumps: Vec::new(),
        gamma_max,
        gamma_max_simp: None,
        best: None,
        failure: None,
    };
    if config.epochs == 0 {
        return Ok(report);
    }
    let mut trainer = Trainer::new(model, config.clone(), gamma_max)?;
    report.gamma_max_simp = trainer.schedule().map(Schedule::gamma_max_simp);
    let example_shape = model.input_shape().to_vec();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let result = run_epoch(model, &mut trainer, splits, &example_shape, epoch, &mut report, &mut observe);
        let record = result.and_then(|tau_sum| {
            let error_rate = |data| error_rate(model, data).map_err(|e| annotate_eval(e, epoch));
            Ok(RunRecord {
                epoch,
                train_error: error_rate(&splits.train)?,
                validation_error: error_rate(&splits.validation)?,
                test_error: error_rate(&splits.test)?,
                mean_tau: tau_sum as f64 / batches_per_epoch as f64,
                seconds: if config.record_wall_clock {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            })
        });
        match record {
            Ok(r) => {
                if report.best.is_none() || report.history.iter().all(|h| r.validation_error < h.validation_error) {
                    report.best = Some(ModelSnapshot::capture(model, epoch));
                }
                report.history.push(r);
            }
            Err(e) => {
                report.failure = Some(e);
                break;
            }
        }
    }
    Ok(report)
}

fn run_epoch<F>(
    model: &mut Model,
    trainer: &mut Trainer,
    splits: &Splits,
    example_shape: &[usize],
    epoch: usize,
    report: &mut TrainReport,
    observe: &mut F,
) -> Result<usize>
where
    F: FnMut(&Model, &StepOutcome),
{
    let config = trainer.config().clone();
    let mut tau_sum = 0;
    let batches = batch_iter(splits.train.len(), config.batch_size, epoch - 1, config.seed)?;
    for (i, batch) in batches.iter().enumerate() {
        let (x, y) = splits.train.gather(batch, example_shape)?;
        let gamma = trainer.gamma();
        let outcome = trainer
            .step(model, &x, &y)
            .map_err(|e| annotate(e, epoch, gamma))?;
        tau_sum += outcome.metrics.tau;
        if config.trace {
            report.trace.push(outcome.metrics);
        }
        if i == 0 && config.dump_epochs.contains(&epoch) {
            let (delta, x_tilde) = match &outcome.simplified {
                Some(s) => (s.delta.clone(), s.x_tilde.clone()),
                None => (Tensor::zeros(x.shape()), x.clone()),
            };
            report.dumps.push(PerturbationDump {
                epoch,
                gamma,
                x,
                delta,
                x_tilde,
            });
        }
        observe(model, &outcome);
    }
    Ok(tau_sum)
}

fn annotate(error: Error, epoch: usize, gamma: usize) -> Error {
    match error {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{context} (epoch {epoch}, iteration {gamma})"),
        },
        other => other,
    }
}

fn annotate_eval(error: Error, epoch: usize) -> Error {
    match error {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{context} (evaluation after epoch {epoch})"),
        },
        other => other,
    }
}
