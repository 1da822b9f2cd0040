//! Error rates, per-epoch history, validation-based model selection and
//! run artifacts.

mod artifacts;

pub use artifacts::{
    aggregate_csv, history_csv, summary_csv, trace_csv, write_atomic, ModelSnapshot, SummaryRow,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{train, TrainReport, TrainerConfig};
use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::nn::{argmax, Architecture, Model};

/// Metrics recorded after one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// 1-based number of completed epochs.
    pub epoch: usize,
    pub train_error: f64,
    pub validation_error: f64,
    pub test_error: f64,
    pub mean_tau: f64,
    pub seconds: f64,
}

const EVAL_CHUNK: usize = 256;

/// Fraction of examples whose eval-mode argmax differs from the label.
pub fn error_rate(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.classes() != model.classes() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes, model predicts {}",
            dataset.classes(),
            model.classes()
        )));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let wrong = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<usize> {
            let (x, y) = dataset.gather(chunk, model.input_shape())?;
            let logits = model.predict(&x)?;
            Ok(y.iter()
                .enumerate()
                .filter(|&(i, &label)| argmax(logits.row(i)) != label)
                .count())
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Position of the lowest validation error; ties go to the earliest epoch.
pub fn select_best(history: &[RunRecord]) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::InvalidInput("cannot select from an empty history".into()));
    }
    let mut best = 0;
    for (i, r) in history.iter().enumerate().skip(1) {
        if r.validation_error < history[best].validation_error {
            best = i;
        }
    }
    Ok(best)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    /// Index into `report.history`.
    pub best_index: usize,
    pub best: RunRecord,
    pub report: TrainReport,
}

#[derive(Debug)]
pub struct RepeatSummary {
    pub runs: Vec<SeedRun>,
    pub mean_test_error: f64,
    pub std_test_error: f64,
}

/// Trains one fresh model per seed (the seed drives initialization, dropout
/// and batch order) and aggregates the test error at each run's best
/// validation epoch. Seeds run in parallel.
pub fn seeded_repeat(arch: &Architecture, splits: &Splits, config: &TrainerConfig, seeds: &[u64]) -> Result<RepeatSummary> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    config.validate()?;
    let runs = seeds
        .par_iter()
        .map(|&seed| -> Result<SeedRun> {
            let mut model = Model::new(arch.clone(), seed)?;
            let config = TrainerConfig {
                seed,
                ..config.clone()
            };
            let report = train(&mut model, splits, &config)?.into_result()?;
            let best_index = select_best(&report.history)?;
            Ok(SeedRun {
                seed,
                best_index,
                best: report.history[best_index],
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = runs.iter().map(|r| r.best.test_error).collect();
    let (mean_test_error, std_test_error) = mean_std(&errors)?;
    Ok(RepeatSummary {
        runs,
        mean_test_error,
        std_test_error,
    })
}

#[cfg(test)]
mod tests;
