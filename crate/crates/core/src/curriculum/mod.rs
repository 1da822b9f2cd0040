//! Developmental plans and the three training strategies: classic training,
//! friendly training (input simplification with a shrinking inner loop) and
//! easy-examples-first.

mod plan;
mod simplify;
mod steps;
mod trainer;

pub use plan::{plan_k, plan_tau, Schedule};
pub use simplify::{perturb, simplify_batch, simplify_into, PerturbationBuffer, Simplified};
pub use steps::{ct_step, easiest, eef_step, ft_step, StepMetrics};
pub use trainer::{train, train_with, PerturbationDump, StepOutcome, TrainReport, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "CT", alias = "ct")]
    Classic,
    #[serde(rename = "FT", alias = "ft")]
    Friendly,
    #[serde(rename = "EEF", alias = "eef")]
    EasyFirst,
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::Classic => "CT",
            Strategy::Friendly => "FT",
            Strategy::EasyFirst => "EEF",
        }
    }

    fn uses_plan(&self) -> bool {
        !matches!(self, Strategy::Classic)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CT" => Ok(Strategy::Classic),
            "FT" => Ok(Strategy::Friendly),
            "EEF" => Ok(Strategy::EasyFirst),
            _ => Err(Error::config("strategy", format!("unknown strategy {s:?}, expected CT, FT or EEF"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    /// Step size of the perturbation descent.
    pub eta: f64,
    /// Inner steps at the first outer iteration.
    pub tau1: usize,
    pub confidence_threshold: f64,
    /// Plan horizon as a fraction of the total iteration count.
    pub gamma_max_simp_fraction: f64,
    pub adam: AdamConfig,
    /// Drives weight initialization, dropout masks and mini-batch order.
    pub seed: u64,
    /// Keep one [`StepMetrics`] row per outer iteration.
    pub trace: bool,
    /// 1-based epochs whose first mini-batch is captured as a [`PerturbationDump`].
    pub dump_epochs: Vec<usize>,
    /// Fill `seconds` in the history; off keeps histories byte-reproducible.
    pub record_wall_clock: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Classic,
            epochs: 10,
            batch_size: 32,
            eta: 1.0,
            tau1: 10,
            confidence_threshold: 0.9,
            gamma_max_simp_fraction: 0.5,
            adam: AdamConfig::default(),
            seed: 0,
            trace: false,
            dump_epochs: Vec::new(),
            record_wall_clock: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "must be a positive finite number"));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return Err(Error::config("confidence_threshold", "must lie in (0, 1]"));
        }
        if !(self.gamma_max_simp_fraction > 0.0 && self.gamma_max_simp_fraction < 1.0) {
            return Err(Error::config("gamma_max_simp_fraction", "must lie in (0, 1)"));
        }
        if self.dump_epochs.contains(&0) {
            return Err(Error::config("dump_epochs", "epochs are numbered from 1"));
        }
        self.adam.validate()
    }
}
