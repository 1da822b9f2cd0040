use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::curriculum::StepMetrics;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Model, Param, RunningBuffer};

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Architecture, weights and batchnorm running averages of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub architecture: Architecture,
    pub seed: u64,
    pub epoch: usize,
    pub params: Vec<Param>,
    pub running: Vec<RunningBuffer>,
}

impl ModelSnapshot {
    pub fn capture(model: &Model, epoch: usize) -> Self {
        Self {
            architecture: model.architecture().clone(),
            seed: model.rng_seed(),
            epoch,
            params: model.params().to_vec(),
            running: model.running_buffers(),
        }
    }

    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::new(self.architecture.clone(), self.seed)?;
        model.load_params(&self.params)?;
        model.set_running_buffers(&self.running)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn render<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// `epoch,train_err,val_err,test_err,mean_tau,seconds`
pub fn history_csv(history: &[RunRecord]) -> Result<Vec<u8>> {
    render(
        &["epoch", "train_err", "val_err", "test_err", "mean_tau", "seconds"],
        history.iter().map(|r| {
            [
                r.epoch.to_string(),
                r.train_error.to_string(),
                r.validation_error.to_string(),
                r.test_error.to_string(),
                r.mean_tau.to_string(),
                r.seconds.to_string(),
            ]
        }),
    )
}

/// `gamma,tau,frozen_fraction,batch_loss`, plus `k` when requested.
pub fn trace_csv(trace: &[StepMetrics], with_k: bool) -> Result<Vec<u8>> {
    let mut header = vec!["gamma", "tau", "frozen_fraction", "batch_loss"];
    if with_k {
        header.push("k");
    }
    render(
        &header,
        trace.iter().map(|m| {
            let mut row = vec![
                m.gamma.to_string(),
                m.tau.to_string(),
                m.frozen_fraction.to_string(),
                m.batch_loss.to_string(),
            ];
            if with_k {
                row.push(m.k.to_string());
            }
            row
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub test_err: f64,
}

/// `strategy,seed,best_epoch,test_err`
pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    render(
        &["strategy", "seed", "best_epoch", "test_err"],
        rows.iter().map(|r| {
            [
                r.strategy.clone(),
                r.seed.to_string(),
                r.best_epoch.to_string(),
                r.test_err.to_string(),
            ]
        }),
    )
}

/// `strategy,seeds,mean_test_err,std_test_err_population`
pub fn aggregate_csv(strategy: &str, seeds: usize, mean: f64, std: f64) -> Result<Vec<u8>> {
    render(
        &["strategy", "seeds", "mean_test_err", "std_test_err_population"],
        [[strategy.to_owned(), seeds.to_string(), mean.to_string(), std.to_string()]],
    )
}
