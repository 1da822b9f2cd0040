//! The `friendly` command line: argument parsing, config overrides and exit codes.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numeric failure (including
//! a failed gradient check), 3 I/O error.

mod commands;
mod config;

pub use commands::{
    cmd_grid, cmd_gradcheck, cmd_gradcheck_with, cmd_inspect_amat, cmd_make_moons, cmd_train, sort_grid,
    AmatSummary, GradcheckSummary, GridRow, TrainSummary,
};
pub use config::{DatasetSpec, ExperimentConfig, GridSpec};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::curriculum::Strategy;
use crate::error::Result;
use crate::nn::Architecture;

#[derive(Debug, Parser)]
#[command(name = "friendly", version, about = "Friendly, classic and easy-examples-first training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed and write histories, summaries and the best snapshot.
    Train(RunArgs),
    /// Train every combination of the config's `grid` lists.
    Grid(RunArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Preset name or architecture JSON path.
        #[arg(long, default_value = "fc-a")]
        architecture: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a two-moons dataset in `.amat` format.
    MakeMoons {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print shape, value range and class balance of an `.amat` file.
    InspectAmat {
        path: PathBuf,
        #[arg(long, default_value_t = 784)]
        features: usize,
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// Flags that override fields of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub architecture: Option<String>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub tau1: Option<usize>,
    #[arg(long, short = 'c')]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub gamma_max_simp_fraction: Option<f64>,
    #[arg(long)]
    pub adam_alpha: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_epsilon: Option<f64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub trace: bool,
    /// Comma-separated 1-based epochs.
    #[arg(long, value_delimiter = ',')]
    pub dump_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub record_wall_clock: bool,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

impl RunArgs {
    /// Loads the config file (or defaults) and applies the flags on top.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            architecture => architecture,
            strategy => strategy,
            epochs => epochs,
            batch_size => batch_size,
            eta => eta,
            tau1 => tau1,
            confidence_threshold => confidence_threshold,
            gamma_max_simp_fraction => gamma_max_simp_fraction,
            adam_alpha => adam.alpha,
            adam_beta1 => adam.beta1,
            adam_beta2 => adam.beta2,
            adam_epsilon => adam.epsilon,
            seeds => seeds,
            output_dir => output_dir,
            dump_epochs => dump_epochs,
        );
        c.trace |= self.trace;
        c.record_wall_clock |= self.record_wall_clock;
        c.validate()?;
        Ok(c)
    }
}

/// Status for a gradient check whose comparison failed.
pub const EXIT_GRADCHECK_FAILED: i32 = 2;

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let summary = cmd_train(&config)?;
            for row in &summary.rows {
                println!(
                    "{} seed {} best epoch {} test error {}",
                    row.strategy, row.seed, row.best_epoch, row.test_err
                );
            }
            println!(
                "mean test error {} (population std {}) -> {}",
                summary.mean_test_error,
                summary.std_test_error,
                config.output_dir.display()
            );
            Ok(0)
        }
        Command::Grid(args) => {
            let config = args.resolve()?;
            let rows = cmd_grid(&config)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            if let Some(best) = rows.first().filter(|r| r.outcome.is_ok()) {
                println!(
                    "best run {}: eta {} tau1 {} c {} gamma_max_simp_fraction {} (validation error {})",
                    best.run,
                    best.eta,
                    best.tau1,
                    best.confidence_threshold,
                    best.gamma_max_simp_fraction,
                    best.validation_error().unwrap_or(f64::NAN)
                );
            }
            println!("{} runs, {failed} failed -> {}", rows.len(), config.output_dir.join("grid.csv").display());
            Ok(0)
        }
        Command::Gradcheck { architecture, seed } => {
            let arch = Architecture::load(&architecture)?;
            let summary = cmd_gradcheck(&arch, seed)?;
            print!("{}", summary.render());
            Ok(if summary.passed() { 0 } else { EXIT_GRADCHECK_FAILED })
        }
        Command::MakeMoons { n, noise, seed, output } => {
            cmd_make_moons(n, noise, seed, &output)?;
            println!("wrote {n} examples to {}", output.display());
            Ok(0)
        }
        Command::InspectAmat { path, features, limit } => {
            print!("{}", cmd_inspect_amat(&path, features, limit)?);
            Ok(0)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
