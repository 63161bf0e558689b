//! The `mmreg` command-line surface, usable as a library.
//!
//! Exit codes: 0 success, 2 bad input or flags, 3 numerical failure,
//! 4 iteration budget exhausted.

mod args;
mod bench;
mod cv;
mod fit;
mod io;
mod metrics;
mod simulate;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command, SEED_ENV};
pub use bench::{bench_one, cmd_bench, BenchArgs, BenchRow, BenchScenario, AGREE_TOL};
pub use cv::{
    cmd_cv, cv_lowrank, cv_sparse_quantile, default_grid, fold_assignment, log_grid, run_cv, CvOptions, CvOutcome,
    CvPoint, CvReport, SparseCv, GRID_POINTS, MAX_K,
};
pub use fit::{cmd_fit, rescore, run_fit, FitConfig, FitReport, Hyper, ModelKind, LOWRANK_MU};
pub use io::{read_table, read_vector, split_design, write_table, Design, InterceptMode, Table};
pub use metrics::{cmd_metrics, selection_metrics, MetricsArgs, MetricsReport};
pub use simulate::{cmd_simulate, sidecar_path, simulate, Scenario, SimSidecar, SimulateArgs, Simulated};

use crate::error::MmError;

/// Version tag written into every JSON document.
pub const SCHEMA: u32 = 1;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

/// Exit code for an error.
pub fn exit_code(err: &MmError) -> i32 {
    match err {
        MmError::Input(_) | MmError::Domain(_) | MmError::Io(_) | MmError::Csv(_) | MmError::Json(_) => EXIT_INPUT,
        MmError::Factorization(_)
        | MmError::State(_)
        | MmError::Singular(_)
        | MmError::Numerical { .. }
        | MmError::Divergence(_) => EXIT_NUMERICAL,
        MmError::NotConverged(_) => EXIT_NOT_CONVERGED,
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn dispatch(cli: Cli) -> crate::Result<()> {
    match cli.command {
        Command::Fit(cmd) => {
            let config = cmd.model.config();
            let report = cmd_fit(&config);
            if let Ok(r) = &report {
                warn_all(&r.warnings);
            }
            report.map(drop)
        }
        Command::Simulate(cmd) => cmd_simulate(&cmd.args()).map(drop),
        Command::Cv(cmd) => {
            let report = cmd_cv(&cmd.model.config(), &cmd.options())?;
            warn_all(&report.refit.warnings);
            Ok(())
        }
        Command::Metrics(cmd) => cmd_metrics(&cmd.args()).map(drop),
        Command::Bench(cmd) => {
            let rows = cmd_bench(&cmd.args())?;
            for r in rows.iter().filter(|r| !r.agree && r.solver == "mm") {
                eprintln!("warning: objectives disagree at p = {}", r.p);
            }
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
