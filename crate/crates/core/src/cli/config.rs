//! Experiment configuration files.
//!
//! A config is a JSON object; every field is optional and falls back to the
//! defaults below. Unknown fields are rejected.
//!
//! ```json
//! {
//!   "dataset": { "kind": "two_moons", "n_train": 200, "n_validation": 100,
//!                "n_test": 100, "noise": 0.2, "seed": 0 },
//!   "architecture": "toy-moons",
//!   "strategy": "FT",
//!   "epochs": 10, "batch_size": 32,
//!   "eta": 1.0, "tau1": 10, "confidence_threshold": 0.9,
//!   "gamma_max_simp_fraction": 0.5,
//!   "adam": { "alpha": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8 },
//!   "seeds": [0, 1, 2],
//!   "output_dir": "runs/moons",
//!   "trace": false, "dump_epochs": [], "record_wall_clock": false,
//!   "grid": { "eta": [0.1, 1.0], "tau1": [10, 80] }
//! }
//! ```
//!
//! `.amat` data instead uses
//! `{ "kind": "amat", "train": "...", "test": "...", "validation": null,
//! "validation_fraction": 0.1, "split_seed": 0, "train_limit": null,
//! "test_limit": null }`. Without a validation file, the validation split is
//! carved from the (limited) training rows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{Strategy, TrainerConfig};
use crate::data::{load_amat_limited, two_moons, Dataset, ImageGeometry, Splits};
use crate::error::{Error, Result};
use crate::nn::Architecture;
use crate::optim::AdamConfig;

fn default_n_train() -> usize {
    200
}
fn default_n_eval() -> usize {
    100
}
fn default_noise() -> f64 {
    0.2
}
fn default_validation_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Three independent draws (train / validation / test) with seeds
    /// `seed`, `seed + 1` and `seed + 2`.
    TwoMoons {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_eval")]
        n_validation: usize,
        #[serde(default = "default_n_eval")]
        n_test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Amat {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        validation: Option<PathBuf>,
        #[serde(default = "default_validation_fraction")]
        validation_fraction: f64,
        #[serde(default)]
        split_seed: u64,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            n_train: default_n_train(),
            n_validation: default_n_eval(),
            n_test: default_n_eval(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::TwoMoons {
                n_train,
                n_validation,
                n_test,
                noise,
                ..
            } => {
                for (field, n) in [
                    ("dataset.n_train", n_train),
                    ("dataset.n_validation", n_validation),
                    ("dataset.n_test", n_test),
                ] {
                    if *n < 2 {
                        return Err(Error::config(field, "must be at least 2"));
                    }
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::config("dataset.noise", "must be a finite non-negative number"));
                }
            }
            DatasetSpec::Amat {
                validation,
                validation_fraction,
                train_limit,
                test_limit,
                ..
            } => {
                if validation.is_none() && !(*validation_fraction > 0.0 && *validation_fraction < 1.0) {
                    return Err(Error::config("dataset.validation_fraction", "must lie in (0, 1)"));
                }
                if *train_limit == Some(0) {
                    return Err(Error::config("dataset.train_limit", "must be positive"));
                }
                if *test_limit == Some(0) {
                    return Err(Error::config("dataset.test_limit", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Materializes the three splits for `arch`.
    pub fn load(&self, arch: &Architecture) -> Result<Splits> {
        self.validate()?;
        match self {
            DatasetSpec::TwoMoons {
                n_train,
                n_validation,
                n_test,
                noise,
                seed,
            } => {
                let draw = |n, s| -> Result<Dataset> { two_moons(n, *noise, s)?.with_classes(arch.classes) };
                Splits::new(draw(*n_train, *seed)?, draw(*n_validation, seed + 1)?, draw(*n_test, seed + 2)?)
            }
            DatasetSpec::Amat {
                train,
                test,
                validation,
                validation_fraction,
                split_seed,
                train_limit,
                test_limit,
            } => {
                let d = arch.input_len();
                let prepare = |path: &Path, limit: Option<usize>| -> Result<Dataset> {
                    let data = load_amat_limited(path, d, limit)?.with_classes(arch.classes)?;
                    match arch.input_shape[..] {
                        [channels, height, width] => data.with_geometry(ImageGeometry {
                            channels,
                            height,
                            width,
                        }),
                        _ => Ok(data),
                    }
                };
                let train_set = prepare(train, *train_limit)?;
                let test_set = prepare(test, *test_limit)?;
                match validation {
                    Some(v) => Splits::new(train_set, prepare(v, None)?, test_set),
                    None => Splits::carve_validation(&train_set, test_set, *validation_fraction, *split_seed),
                }
            }
        }
    }
}

/// Value lists for a Cartesian grid search; a missing list means the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub eta: Option<Vec<f64>>,
    pub tau1: Option<Vec<usize>>,
    pub confidence_threshold: Option<Vec<f64>>,
    pub gamma_max_simp_fraction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Preset name or path to an architecture JSON file.
    pub architecture: String,
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub tau1: usize,
    pub confidence_threshold: f64,
    pub gamma_max_simp_fraction: f64,
    pub adam: AdamConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub trace: bool,
    pub dump_epochs: Vec<usize>,
    pub record_wall_clock: bool,
    pub grid: Option<GridSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            dataset: DatasetSpec::default(),
            architecture: "toy-moons".into(),
            strategy: t.strategy,
            epochs: t.epochs,
            batch_size: t.batch_size,
            eta: t.eta,
            tau1: t.tau1,
            confidence_threshold: t.confidence_threshold,
            gamma_max_simp_fraction: t.gamma_max_simp_fraction,
            adam: t.adam,
            seeds: vec![0],
            output_dir: PathBuf::from("runs/default"),
            trace: t.trace,
            dump_epochs: t.dump_epochs,
            record_wall_clock: t.record_wall_clock,
            grid: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            strategy: self.strategy,
            epochs: self.epochs,
            batch_size: self.batch_size,
            eta: self.eta,
            tau1: self.tau1,
            confidence_threshold: self.confidence_threshold,
            gamma_max_simp_fraction: self.gamma_max_simp_fraction,
            adam: self.adam,
            seed,
            trace: self.trace,
            dump_epochs: self.dump_epochs.clone(),
            record_wall_clock: self.record_wall_clock,
        }
    }

    pub fn load_architecture(&self) -> Result<Architecture> {
        Architecture::load(&self.architecture).map_err(|e| match e {
            e @ Error::Io { .. } => e,
            other => Error::config("architecture", other.to_string()),
        })
    }

    /// Checks every field without touching the file system.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        self.trainer_config(0).validate()?;
        if let Some(grid) = &self.grid {
            for combo in self.grid_points_unchecked(grid) {
                combo.trainer_config(0).validate()?;
            }
            let empty = [
                grid.eta.as_ref().map(Vec::len),
                grid.tau1.as_ref().map(Vec::len),
                grid.confidence_threshold.as_ref().map(Vec::len),
                grid.gamma_max_simp_fraction.as_ref().map(Vec::len),
            ]
            .contains(&Some(0));
            if empty {
                return Err(Error::config("grid", "value lists must not be empty"));
            }
        }
        Ok(())
    }

    fn grid_points_unchecked(&self, grid: &GridSpec) -> Vec<ExperimentConfig> {
        let etas = grid.eta.clone().unwrap_or_else(|| vec![self.eta]);
        let taus = grid.tau1.clone().unwrap_or_else(|| vec![self.tau1]);
        let cs = grid
            .confidence_threshold
            .clone()
            .unwrap_or_else(|| vec![self.confidence_threshold]);
        let fractions = grid
            .gamma_max_simp_fraction
            .clone()
            .unwrap_or_else(|| vec![self.gamma_max_simp_fraction]);
        let mut points = Vec::new();
        for &eta in &etas {
            for &tau1 in &taus {
                for &confidence_threshold in &cs {
                    for &gamma_max_simp_fraction in &fractions {
                        points.push(ExperimentConfig {
                            eta,
                            tau1,
                            confidence_threshold,
                            gamma_max_simp_fraction,
                            grid: None,
                            ..self.clone()
                        });
                    }
                }
            }
        }
        points
    }

    /// Cartesian product of the grid lists (a single point without a grid),
    /// ordered eta, tau1, confidence_threshold, gamma_max_simp_fraction with
    /// the last varying fastest.
    pub fn grid_points(&self) -> Result<Vec<ExperimentConfig>> {
        self.validate()?;
        Ok(match &self.grid {
            Some(grid) => self.grid_points_unchecked(grid),
            None => vec![ExperimentConfig {
                grid: None,
                ..self.clone()
            }],
        })
    }
}
