//! `bench`: recycled-factorization MM against a baseline that refactorizes
//! a weighted Gram matrix on every iteration.

use std::path::PathBuf;
use std::time::Instant;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decompose::{factor_tally, FactorCache};
use crate::error::{MmError, Result};
use crate::estimators::{bernoulli_loglik, fit_lad, fit_logistic, lad_objective, logistic_probs, RegressionData};
use crate::mmengine::MMOptions;
use crate::simdata::{
    default_truth_beta, gen_design, gen_glm_response, gen_quantile_response, quantile_bandwidth, GlmFamily,
    GlmResponse, Noise, SimSpec,
};

/// Relative objective gap under which the two solvers agree.
pub const AGREE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BenchScenario {
    /// Smoothed LAD against Huber IRLS.
    Lad,
    /// Logistic regression against Newton IRLS.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: BenchScenario,
    pub n: usize,
    pub p: usize,
    /// `mm` or `irls`.
    pub solver: String,
    pub iterations: usize,
    pub factorizations: usize,
    pub objective: f64,
    pub seconds: f64,
    /// `|f_mm - f_irls| / (1 + |f_irls|) <= 1e-6`, same on both rows.
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchArgs {
    pub scenario: BenchScenario,
    /// Values of `p`; each problem has `n = 20 p`.
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub output: Option<PathBuf>,
}

struct Baseline {
    beta: DVector<f64>,
    objective: f64,
    iterations: usize,
}

fn relative_change(old: f64, new: f64) -> f64 {
    (old - new).abs() / (old.abs() + 1.0)
}

fn weighted_solve(x: &DMatrix<f64>, w: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
    FactorCache::from_gram(x.tr_mul(&xw), 0.0, true, false)?.solve_normal(rhs)
}

/// Huber IRLS from zero: `beta = (X^T W X)^{-1} X^T W y` with
/// `w_i = 1 / max(mu, |r_i|)`.
fn lad_irls(data: &RegressionData, mu: f64, tol: f64, max_iter: usize) -> Result<Baseline> {
    let (x, y) = (&data.x, &data.y);
    let mut beta = DVector::zeros(x.ncols());
    let mut f = lad_objective(x, y, &beta, mu);
    for it in 1..=max_iter {
        let w = (y - x * &beta).map(|r| 1.0 / r.abs().max(mu));
        let rhs = x.tr_mul(&y.component_mul(&w));
        beta = weighted_solve(x, &w, &rhs)?;
        let f_new = lad_objective(x, y, &beta, mu);
        let done = relative_change(f, f_new) < tol;
        f = f_new;
        if done {
            return Ok(Baseline { beta, objective: f, iterations: it });
        }
    }
    Err(MmError::NotConverged(max_iter))
}

/// Newton IRLS for logistic regression with step halving.
fn logistic_irls(data: &RegressionData, tol: f64, max_iter: usize) -> Result<Baseline> {
    let (x, y) = (&data.x, &data.y);
    let n = y.len() as f64;
    let obj = |b: &DVector<f64>| -bernoulli_loglik(x, y, b) / n;
    let mut beta = DVector::zeros(x.ncols());
    let mut f = obj(&beta);
    for it in 1..=max_iter {
        let pr = logistic_probs(x, &beta);
        let w = pr.map(|p| p * (1.0 - p));
        let step = weighted_solve(x, &w, &x.tr_mul(&(y - &pr)))?;
        let mut t = 1.0;
        let mut cand = &beta + &step;
        let mut f_new = obj(&cand);
        while !(f_new <= f) && t > 1e-10 {
            t *= 0.5;
            cand = &beta + &step * t;
            f_new = obj(&cand);
        }
        beta = cand;
        let done = relative_change(f, f_new) < tol;
        f = f_new;
        if done {
            return Ok(Baseline { beta, objective: f, iterations: it });
        }
    }
    Err(MmError::NotConverged(max_iter))
}

/// One pair of rows for a problem with `p` columns.
pub fn bench_one(scenario: BenchScenario, p: usize, seed: u64, tol: f64, max_iter: usize) -> Result<[BenchRow; 2]> {
    if p < 2 {
        return Err(MmError::input("bench sizes must be at least 2"));
    }
    let n = 20 * p;
    let x = gen_design(&SimSpec::new(n, p, seed))?;
    let truth = default_truth_beta(p);
    let y = match scenario {
        BenchScenario::Lad => gen_quantile_response(&x, &truth, 0.5, Noise::Gaussian { sd: 1.0 }, seed)?,
        BenchScenario::Logistic => {
            let b = DMatrix::from_column_slice(p, 1, truth.as_slice());
            match gen_glm_response(&x, &b, GlmFamily::Bernoulli, seed)? {
                GlmResponse::Binary(y) => y,
                GlmResponse::Labels(_) => unreachable!("Bernoulli gives binary responses"),
            }
        }
    };
    let data = RegressionData::with_intercept_column(x, y)?;
    let opts = MMOptions::default().with_tol(tol).with_max_iter(max_iter);

    let start = Instant::now();
    let mm = match scenario {
        BenchScenario::Lad => fit_lad(&data, quantile_bandwidth(n, p), &opts)?,
        BenchScenario::Logistic => fit_logistic(&data, &opts)?,
    };
    let mm_secs = start.elapsed().as_secs_f64();
    if !mm.converged {
        return Err(MmError::NotConverged(mm.iterations));
    }

    let before = factor_tally();
    let start = Instant::now();
    let base = match scenario {
        BenchScenario::Lad => lad_irls(&data, quantile_bandwidth(n, p), tol, max_iter)?,
        BenchScenario::Logistic => logistic_irls(&data, tol, max_iter)?,
    };
    let irls_secs = start.elapsed().as_secs_f64();
    let irls_factors = factor_tally().since(before).total();
    debug_assert_eq!(base.beta.len(), p);

    if mm.factorizations.total() != 1 || irls_factors != base.iterations {
        return Err(MmError::State(format!(
            "factorization contract broken: mm {} (expected 1), irls {} (expected {})",
            mm.factorizations.total(),
            irls_factors,
            base.iterations
        )));
    }
    let agree = relative_change(base.objective, mm.objective) <= AGREE_TOL;
    let row = |solver: &str, iterations, factorizations, objective, seconds| BenchRow {
        scenario,
        n,
        p,
        solver: solver.into(),
        iterations,
        factorizations,
        objective,
        seconds,
        agree,
    };
    Ok([
        row("mm", mm.iterations, mm.factorizations.total(), mm.objective, mm_secs),
        row("irls", base.iterations, irls_factors, base.objective, irls_secs),
    ])
}

/// Runs every size and writes CSV to `output` or stdout.
pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    if args.sizes.is_empty() {
        return Err(MmError::input("--sizes is empty"));
    }
    let mut rows = Vec::new();
    for &p in &args.sizes {
        rows.extend(bench_one(args.scenario, p, args.seed, args.tol, args.max_iter)?);
    }
    match &args.output {
        Some(path) => write_rows(csv::Writer::from_path(path)?, &rows)?,
        None => write_rows(csv::Writer::from_writer(std::io::stdout()), &rows)?,
    }
    Ok(rows)
}

fn write_rows<W: std::io::Write>(mut w: csv::Writer<W>, rows: &[BenchRow]) -> Result<()> {
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
