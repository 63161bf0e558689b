//! `cv`: K-fold cross-validation over a penalty grid.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{
    load_design, multinomial_data, regression_data, run_fit, FitConfig, FitReport, ModelKind, LOWRANK_MU,
};
use super::io::write_json;
use super::SCHEMA;
use crate::decompose::FactorCache;
use crate::error::{MmError, Result};
use crate::estimators::{
    fit_lowrank_with, fit_sparse_quantile_l0_with, fit_sparse_quantile_pd_with, multinomial_loglik, AnnealSchedule,
    LowRankSolver, MultinomialData, QuantileSpec, RegressionData,
};
use crate::mmengine::MMOptions;
use crate::prox::check_unchecked;
use crate::simdata::{rng_for, sparse_bandwidth};

const STREAM_FOLDS: u64 = 4;

/// Number of points in the default penalty grids.
pub const GRID_POINTS: usize = 50;

/// Largest sparsity level in the default grid.
pub const MAX_K: usize = 50;

/// Cross-validation controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    /// `None` selects the model's default grid.
    pub grid: Option<Vec<f64>>,
    pub jobs: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { folds: 5, grid: None, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub value: f64,
    /// Validation loss pooled over all held-out observations.
    pub loss: f64,
    /// Mean validation loss within each fold.
    pub fold_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub points: Vec<CvPoint>,
    /// Index of the smallest loss; ties go to the earlier grid point.
    pub best: usize,
}

impl CvOutcome {
    pub fn best_value(&self) -> f64 {
        self.points[self.best].value
    }
}

/// JSON written by `cv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub schema: u32,
    pub model: ModelKind,
    pub folds: usize,
    pub seed: u64,
    /// `check-loss` or `neg-loglik`.
    pub validation: String,
    pub points: Vec<CvPoint>,
    pub best_index: usize,
    pub best_value: f64,
    /// Fit on all observations at the selected value.
    pub refit: FitReport,
}

/// Fold index of each observation: a seeded shuffle dealt round robin, so
/// fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(MmError::input(format!("--folds must be at least 2, got {folds}")));
    }
    if folds > n {
        return Err(MmError::input(format!("--folds {folds} exceeds the {n} observations")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, STREAM_FOLDS));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % folds;
    }
    Ok(fold)
}

/// `m` points spaced evenly in log scale from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..m).map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp()).collect()
}

/// `k = 1..=min(50, free)` for the distance penalty; 50 log-spaced values
/// in `[1e-4, 1]` for the penalty constants.
pub fn default_grid(model: ModelKind, free: usize) -> Result<Vec<f64>> {
    match model {
        ModelKind::SparseQuantilePd => Ok((1..=MAX_K.min(free.max(1))).map(|k| k as f64).collect()),
        ModelKind::SparseQuantileL0 | ModelKind::LowrankMultinomial => Ok(log_grid(1e-4, 1.0, GRID_POINTS)),
        other => Err(MmError::input(format!(
            "cv supports sparse-quantile-pd, sparse-quantile-l0 and lowrank-multinomial, not {}",
            other.name()
        ))),
    }
}

fn split(fold: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold.len()).partition(|&i| fold[i] != f)
}

fn run_folds<F>(folds: usize, jobs: usize, job: F) -> Result<Vec<Vec<(f64, usize)>>>
where
    F: Fn(usize) -> Result<Vec<(f64, usize)>> + Sync,
{
    if jobs <= 1 {
        return (0..folds).map(&job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| MmError::input(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| (0..folds).into_par_iter().map(&job).collect())
}

/// Per fold, per grid point: (summed loss, held-out count).
fn collect(grid: &[f64], per_fold: Vec<Vec<(f64, usize)>>) -> CvOutcome {
    let n: usize = per_fold.iter().map(|f| f[0].1).sum();
    let points: Vec<CvPoint> = grid
        .iter()
        .enumerate()
        .map(|(g, &value)| {
            let total: f64 = per_fold.iter().map(|f| f[g].0).sum();
            let fold_losses = per_fold.iter().map(|f| f[g].0 / f[g].1 as f64).collect();
            CvPoint { value, loss: total / n as f64, fold_losses }
        })
        .collect();
    let best = points.iter().enumerate().fold(0, |b, (i, p)| if p.loss < points[b].loss { i } else { b });
    CvOutcome { points, best }
}

/// Which sparse penalty is cross-validated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparseCv {
    /// Grid over the sparsity level `k`.
    Distance,
    /// Grid over `lambda` at fixed `alpha`.
    L0 { alpha: f64 },
}

/// Check-loss validation of sparse quantile fits. Each fold builds one
/// spectral factor and reuses it across the grid; penalty-constant grids
/// are walked in the given order with warm starts.
#[allow(clippy::too_many_arguments)]
pub fn cv_sparse_quantile(
    data: &RegressionData,
    spec: QuantileSpec,
    kind: SparseCv,
    grid: &[f64],
    folds: usize,
    seed: u64,
    jobs: usize,
    opts: &MMOptions,
) -> Result<CvOutcome> {
    check_grid(grid, matches!(kind, SparseCv::Distance))?;
    let fold = fold_assignment(data.n(), folds, seed)?;
    let opts = MMOptions { trace_path: None, ..opts.clone() };
    let per_fold = run_folds(folds, jobs, |f| {
        let (train_idx, test_idx) = split(&fold, f);
        let train = data.subset(&train_idx);
        let test = data.subset(&test_idx);
        let cache = FactorCache::spectral_only(&train.x)?;
        let mut warm: Option<DVector<f64>> = None;
        grid.iter()
            .map(|&v| {
                let sf = match kind {
                    SparseCv::Distance => fit_sparse_quantile_pd_with(
                        &train,
                        spec,
                        v as usize,
                        &AnnealSchedule::default(),
                        &cache,
                        None,
                        &opts,
                    )?,
                    SparseCv::L0 { alpha } => {
                        fit_sparse_quantile_l0_with(&train, spec, v, alpha, &cache, warm.take(), &opts)?
                    }
                };
                warm = Some(sf.fit.beta);
                let r = &test.y - &test.x * &sf.sparse;
                Ok((r.iter().map(|&ri| check_unchecked(ri, spec.q)).sum(), test.n()))
            })
            .collect()
    })?;
    Ok(collect(grid, per_fold))
}

/// Held-out mean negative loglikelihood of low-rank multinomial fits along
/// a `lambda` grid. Each fold builds one solver for its whole path.
pub fn cv_lowrank(
    data: &MultinomialData,
    mu: f64,
    grid: &[f64],
    folds: usize,
    seed: u64,
    jobs: usize,
    opts: &MMOptions,
) -> Result<CvOutcome> {
    check_grid(grid, false)?;
    let fold = fold_assignment(data.n(), folds, seed)?;
    let opts = MMOptions { trace_path: None, ..opts.clone() };
    let per_fold = run_folds(folds, jobs, |f| {
        let (train_idx, test_idx) = split(&fold, f);
        let train = data.subset(&train_idx);
        let test = data.subset(&test_idx);
        let solver = LowRankSolver::new(&train.x, train.c)?;
        let mut warm = None;
        grid.iter()
            .map(|&lambda| {
                let fit = fit_lowrank_with(&train, &solver, lambda, mu, warm.take(), &opts)?;
                let ll = multinomial_loglik(&fit.model, &test.x, &test.labels)?;
                warm = Some(fit.model.b);
                Ok((-ll, test.n()))
            })
            .collect()
    })?;
    Ok(collect(grid, per_fold))
}

fn check_grid(grid: &[f64], integer: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(MmError::input("the grid is empty"));
    }
    for &v in grid {
        let ok = if integer { v >= 1.0 && v.fract() == 0.0 } else { v >= 0.0 && v.is_finite() };
        if !ok {
            return Err(MmError::input(format!("invalid grid value {v}")));
        }
    }
    Ok(())
}

/// Cross-validates the grid, refits at the selected value on all data and
/// writes the report.
pub fn cmd_cv(config: &FitConfig, cv: &CvOptions) -> Result<CvReport> {
    let report = run_cv(config, cv)?;
    write_json(config.output.as_deref(), &report)?;
    Ok(report)
}

/// [`cmd_cv`] without writing.
pub fn run_cv(config: &FitConfig, cv: &CvOptions) -> Result<CvReport> {
    let model = config.model;
    let mut filled = config.clone();
    match model {
        ModelKind::SparseQuantilePd => filled.k = filled.k.or(Some(1)),
        _ => filled.lambda = filled.lambda.or(Some(0.0)),
    }
    filled.validate()?;
    let design = load_design(config)?;
    let (n, p) = design.x.shape();
    let free = p - usize::from(design.intercept);
    let grid = match &cv.grid {
        Some(g) => g.clone(),
        None => default_grid(model, free)?,
    };
    let (outcome, validation) = match model {
        ModelKind::SparseQuantilePd | ModelKind::SparseQuantileL0 => {
            let data = regression_data(&design)?;
            let q = config.q.expect("validated");
            let mu = config.mu.unwrap_or_else(|| sparse_bandwidth(n, p, q));
            filled.mu = Some(mu);
            let spec = QuantileSpec::new(q, mu)?;
            let kind = if model == ModelKind::SparseQuantilePd {
                SparseCv::Distance
            } else {
                let alpha = config.alpha.unwrap_or(mu);
                filled.alpha = Some(alpha);
                SparseCv::L0 { alpha }
            };
            let out = cv_sparse_quantile(&data, spec, kind, &grid, cv.folds, config.seed, cv.jobs, &config.opts)?;
            (out, "check-loss")
        }
        ModelKind::LowrankMultinomial => {
            let data = multinomial_data(&design, config.c)?;
            let mu = config.mu.unwrap_or(LOWRANK_MU);
            filled.mu = Some(mu);
            filled.c = Some(data.c);
            (cv_lowrank(&data, mu, &grid, cv.folds, config.seed, cv.jobs, &config.opts)?, "neg-loglik")
        }
        _ => return Err(default_grid(model, free).expect_err("unsupported model")),
    };
    let best_value = outcome.best_value();
    match model {
        ModelKind::SparseQuantilePd => filled.k = Some(best_value as usize),
        _ => filled.lambda = Some(best_value),
    }
    let refit = run_fit(&filled)?;
    Ok(CvReport {
        schema: SCHEMA,
        model,
        folds: cv.folds,
        seed: config.seed,
        validation: validation.into(),
        best_index: outcome.best,
        best_value,
        points: outcome.points,
        refit,
    })
}
