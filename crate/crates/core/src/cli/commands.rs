use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::curriculum::{train, PerturbationDump, Strategy, TrainReport};
use crate::data::{load_amat_limited, two_moons, write_amat};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_csv, history_csv, mean_std, select_best, summary_csv, trace_csv, write_atomic, SummaryRow,
};
use crate::nn::gradcheck::{analytic_gradients, architecture_case, layer_cases, run_case, SuiteEntry};
use crate::nn::{Architecture, DropoutMasks, Gradients, Mode, Model};
use crate::tensor::Tensor;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Outcome of one `train` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub rows: Vec<SummaryRow>,
    pub mean_validation_error: f64,
    pub mean_test_error: f64,
    pub std_test_error: f64,
}

#[derive(Serialize)]
struct DumpMeta<'a> {
    epoch: usize,
    gamma: usize,
    shape: &'a [usize],
    dtype: &'static str,
    files: [String; 3],
}

fn raw_le(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_dump(dir: &Path, seed: u64, dump: &PerturbationDump) -> Result<()> {
    let stem = format!("dump_seed{seed}_epoch{}", dump.epoch);
    let files = [
        format!("{stem}_x.f64"),
        format!("{stem}_delta.f64"),
        format!("{stem}_x_tilde.f64"),
    ];
    for (name, t) in files.iter().zip([&dump.x, &dump.delta, &dump.x_tilde]) {
        write_atomic(dir.join(name), &raw_le(t))?;
    }
    let meta = DumpMeta {
        epoch: dump.epoch,
        gamma: dump.gamma,
        shape: dump.x.shape(),
        dtype: "f64-le",
        files,
    };
    write_atomic(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?.as_bytes())
}

fn write_seed_outputs(dir: &Path, seed: u64, strategy: Strategy, report: &TrainReport) -> Result<()> {
    write_atomic(dir.join(format!("history_seed{seed}.csv")), &history_csv(&report.history)?)?;
    if !report.trace.is_empty() {
        let with_k = strategy == Strategy::EasyFirst;
        write_atomic(dir.join(format!("trace_seed{seed}.csv")), &trace_csv(&report.trace, with_k)?)?;
    }
    for dump in &report.dumps {
        write_dump(dir, seed, dump)?;
    }
    if let Some(best) = &report.best {
        best.save(dir.join(format!("best_seed{seed}.json")))?;
    }
    Ok(())
}

/// Trains one model per seed and writes, under `output_dir`:
/// `config.json`, `history_seed{s}.csv`, `best_seed{s}.json`, optional
/// `trace_seed{s}.csv` and perturbation dumps, then `summary.csv` and
/// `aggregate.csv`.
///
/// When a run fails numerically its partial history is still written and the
/// first failure is returned.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainSummary> {
    config.validate()?;
    let arch = config.load_architecture()?;
    let splits = config.dataset.load(&arch)?;
    let dir = &config.output_dir;
    create_dir(dir)?;
    let resolved = ExperimentConfig {
        grid: None,
        ..config.clone()
    };
    write_atomic(dir.join("config.json"), resolved.to_json()?.as_bytes())?;

    let results: Vec<Result<(u64, TrainReport)>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut model = Model::new(arch.clone(), seed)?;
            let report = train(&mut model, &splits, &config.trainer_config(seed))?;
            write_seed_outputs(dir, seed, config.strategy, &report)?;
            Ok((seed, report))
        })
        .collect();

    let mut rows = Vec::new();
    let mut validation = Vec::new();
    for result in results {
        let (seed, report) = result?;
        let report = report.into_result()?;
        let best = select_best(&report.history)?;
        let record = report.history[best];
        validation.push(record.validation_error);
        rows.push(SummaryRow {
            strategy: config.strategy.tag().into(),
            seed,
            best_epoch: record.epoch,
            test_err: record.test_error,
        });
    }
    let tests: Vec<f64> = rows.iter().map(|r| r.test_err).collect();
    let (mean_test_error, std_test_error) = mean_std(&tests)?;
    let (mean_validation_error, _) = mean_std(&validation)?;
    write_atomic(dir.join("summary.csv"), &summary_csv(&rows)?)?;
    write_atomic(
        dir.join("aggregate.csv"),
        &aggregate_csv(config.strategy.tag(), rows.len(), mean_test_error, std_test_error)?,
    )?;
    Ok(TrainSummary {
        rows,
        mean_validation_error,
        mean_test_error,
        std_test_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub run: usize,
    pub eta: f64,
    pub tau1: usize,
    pub confidence_threshold: f64,
    pub gamma_max_simp_fraction: f64,
    pub outcome: std::result::Result<TrainSummary, String>,
}

impl GridRow {
    pub fn validation_error(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|s| s.mean_validation_error)
    }
}

/// Rows sorted by mean validation error; failed runs last; ties by run index.
pub fn sort_grid(rows: &mut [GridRow]) {
    rows.sort_by(|a, b| match (a.validation_error(), b.validation_error()) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.run.cmp(&b.run)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.run.cmp(&b.run),
    });
}

fn grid_csv(rows: &[GridRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run",
        "eta",
        "tau1",
        "confidence_threshold",
        "gamma_max_simp_fraction",
        "status",
        "mean_val_err",
        "mean_test_err",
        "std_test_err_population",
        "error",
    ])?;
    for r in rows {
        let mut record = vec![
            r.run.to_string(),
            r.eta.to_string(),
            r.tau1.to_string(),
            r.confidence_threshold.to_string(),
            r.gamma_max_simp_fraction.to_string(),
        ];
        match &r.outcome {
            Ok(s) => record.extend([
                "ok".into(),
                s.mean_validation_error.to_string(),
                s.mean_test_error.to_string(),
                s.std_test_error.to_string(),
                String::new(),
            ]),
            Err(e) => record.extend(["failed".into(), String::new(), String::new(), String::new(), e.clone()]),
        }
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// One [`cmd_train`] per grid point in `output_dir/run_{i}`, then `grid.csv`
/// sorted by validation error. Failing runs are recorded and do not stop
/// the grid.
pub fn cmd_grid(config: &ExperimentConfig) -> Result<Vec<GridRow>> {
    let points = config.grid_points()?;
    create_dir(&config.output_dir)?;
    let width = points.len().to_string().len();
    let mut rows: Vec<GridRow> = points
        .par_iter()
        .enumerate()
        .map(|(run, point)| {
            let point = ExperimentConfig {
                output_dir: config.output_dir.join(format!("run_{run:0width$}")),
                ..point.clone()
            };
            GridRow {
                run,
                eta: point.eta,
                tau1: point.tau1,
                confidence_threshold: point.confidence_threshold,
                gamma_max_simp_fraction: point.gamma_max_simp_fraction,
                outcome: cmd_train(&point).map_err(|e| e.to_string()),
            }
        })
        .collect();
    sort_grid(&mut rows);
    write_atomic(config.output_dir.join("grid.csv"), &grid_csv(&rows)?)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSummary {
    pub entries: Vec<SuiteEntry>,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(SuiteEntry::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(
                out,
                "{:<24} {:<9} max_rel_err={:.3e} worst={}[{}] {}",
                e.case,
                format!("{:?}", e.mode).to_lowercase(),
                e.report.max_rel_error,
                e.report.worst.0,
                e.report.worst.1,
                if e.passed() { "ok" } else { "FAIL" }
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Grad-checks every layer kind plus a tiny instance of `arch`, using
/// `analytic` for the gradients under test.
pub fn cmd_gradcheck_with<F>(arch: &Architecture, seed: u64, analytic: F) -> Result<GradcheckSummary>
where
    F: Fn(&Model, &Tensor, &[usize], Mode, &DropoutMasks) -> Result<Gradients> + Sync,
{
    let mut cases = layer_cases();
    cases.push(architecture_case(arch));
    let entries = cases
        .par_iter()
        .map(|case| run_case(case, seed, &analytic))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckSummary {
        entries: entries.into_iter().flatten().collect(),
    })
}

pub fn cmd_gradcheck(arch: &Architecture, seed: u64) -> Result<GradcheckSummary> {
    cmd_gradcheck_with(arch, seed, analytic_gradients)
}

pub fn cmd_make_moons(n: usize, noise: f64, seed: u64, output: &Path) -> Result<()> {
    let data = two_moons(n, noise, seed)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_atomic(output, write_amat(&data).as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmatSummary {
    pub path: PathBuf,
    pub examples: usize,
    pub features: usize,
    pub class_counts: Vec<usize>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl std::fmt::Display for AmatSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "file      {}", self.path.display())?;
        writeln!(f, "examples  {}", self.examples)?;
        writeln!(f, "features  {}", self.features)?;
        writeln!(f, "range     [{}, {}], mean {:.6}", self.min, self.max, self.mean)?;
        write!(f, "classes  ")?;
        for (c, n) in self.class_counts.iter().enumerate() {
            write!(f, " {c}:{n}")?;
        }
        writeln!(f)
    }
}

pub fn cmd_inspect_amat(path: &Path, features: usize, limit: Option<usize>) -> Result<AmatSummary> {
    let data = load_amat_limited(path, features, limit)?;
    let values = data.features().data();
    Ok(AmatSummary {
        path: path.to_path_buf(),
        examples: data.len(),
        features: data.dim(),
        class_counts: data.class_counts(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}
