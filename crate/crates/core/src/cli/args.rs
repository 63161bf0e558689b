//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::bench::{BenchArgs, BenchScenario};
use super::cv::CvOptions;
use super::fit::{FitConfig, ModelKind};
use super::io::InterceptMode;
use super::metrics::MetricsArgs;
use super::simulate::{Scenario, SimulateArgs};
use crate::mmengine::MMOptions;
use crate::simdata::{Contamination, Noise, SimSpec};

/// Environment variable holding the default seed.
pub const SEED_ENV: &str = "MMREG_SEED";

#[derive(Debug, Parser)]
#[command(name = "mmreg", version, about = "Majorization-minimization regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model to a CSV file.
    Fit(FitCmd),
    /// Write a simulated data set and its JSON sidecar.
    Simulate(SimulateCmd),
    /// Cross-validate a penalty grid, then refit at the best value.
    Cv(CvCmd),
    /// Support recovery and error of an estimate against a truth.
    Metrics(MetricsCmd),
    /// Compare recycled MM against a refactorizing baseline.
    Bench(BenchCmd),
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Quantile level in (0, 1).
    #[arg(long)]
    pub q: Option<f64>,
    /// Smoothing parameter; defaults depend on the model.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Sparsity level.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// l0 envelope parameter; defaults to the smoothing parameter.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of categories; defaults to the largest code.
    #[arg(long)]
    pub c: Option<usize>,
    /// Input CSV with a header row.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Response column name.
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, value_enum, default_value_t = InterceptMode::Auto)]
    pub intercept: InterceptMode,
    /// Output JSON; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Restarted Nesterov extrapolation.
    #[arg(long)]
    pub accelerate: bool,
    /// Per-iteration CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

impl ModelFlags {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            model: self.model,
            q: self.q,
            mu: self.mu,
            k: self.k,
            lambda: self.lambda,
            alpha: self.alpha,
            c: self.c,
            input: self.input.clone(),
            response: self.response.clone(),
            intercept: self.intercept,
            output: self.output.clone(),
            seed: self.seed,
            opts: MMOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                accelerate: self.accelerate,
                trace_gradients: false,
                trace_path: self.trace.clone(),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct CvCmd {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Comma-separated grid; the model default when absent.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Worker threads for the folds.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl CvCmd {
    pub fn options(&self) -> CvOptions {
        CvOptions { folds: self.folds, grid: self.grid.clone(), jobs: self.jobs }
    }
}

fn parse_noise(s: &str) -> Result<Noise, String> {
    let (family, value) = s.split_once(':').ok_or("expected gaussian:SD or t:DF")?;
    let v: f64 = value.parse().map_err(|_| format!("cannot parse `{value}`"))?;
    match family {
        "gaussian" | "normal" => Ok(Noise::Gaussian { sd: v }),
        "t" => Ok(Noise::StudentT { df: v }),
        other => Err(format!("unknown noise family `{other}`")),
    }
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long)]
    pub n: usize,
    /// Columns including the intercept.
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0.7)]
    pub rho: f64,
    /// `gaussian:SD` or `t:DF`.
    #[arg(long, value_parser = parse_noise, default_value = "gaussian:1")]
    pub noise: Noise,
    /// Quantile level whose drift is removed.
    #[arg(long)]
    pub q: Option<f64>,
    /// Fraction of rows shifted in the response and, separately, in the
    /// second design column.
    #[arg(long)]
    pub contamination: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 5)]
    pub c: usize,
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; the sidecar is written beside it as `.json`.
    #[arg(long, short)]
    pub output: PathBuf,
}

impl SimulateCmd {
    pub fn args(&self) -> SimulateArgs {
        SimulateArgs {
            scenario: self.scenario,
            spec: SimSpec {
                n: self.n,
                p: self.p,
                rho: self.rho,
                noise: self.noise,
                quantile_q: self.q,
                contamination: self.contamination.map(|fraction| Contamination { fraction, shift: self.shift }),
                seed: self.seed,
            },
            c: self.c,
            rank: self.rank,
            output: self.output.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricsCmd {
    /// Estimate: fit report JSON or one-column CSV.
    #[arg(long)]
    pub beta_hat: PathBuf,
    /// Truth: simulation sidecar JSON or one-column CSV.
    #[arg(long)]
    pub beta_star: PathBuf,
    /// CSV whose design columns define X.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, value_enum, default_value_t = InterceptMode::Auto)]
    pub intercept: InterceptMode,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl MetricsCmd {
    pub fn args(&self) -> MetricsArgs {
        MetricsArgs {
            beta_hat: self.beta_hat.clone(),
            beta_star: self.beta_star.clone(),
            data: self.data.clone(),
            response: self.response.clone(),
            intercept: self.intercept,
            output: self.output.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    #[arg(long, value_enum)]
    pub scenario: BenchScenario,
    /// Comma-separated values of p.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub sizes: Vec<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Output CSV; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl BenchCmd {
    pub fn args(&self) -> BenchArgs {
        BenchArgs {
            scenario: self.scenario,
            sizes: self.sizes.clone(),
            seed: self.seed,
            tol: self.tol,
            max_iter: self.max_iter,
            output: self.output.clone(),
        }
    }
}
