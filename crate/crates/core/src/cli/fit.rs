//! `fit`: one model on one CSV.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::io::{read_table, split_design, write_json, Design, InterceptMode};
use super::SCHEMA;
use crate::decompose::FactorTally;
use crate::error::{MmError, Result};
use crate::estimators::{
    bernoulli_loglik, fit_isotonic_l2e, fit_l2e, fit_lad, fit_logistic, fit_lowrank_multinomial, fit_multinomial,
    fit_quantile, fit_sparse_quantile_l0, fit_sparse_quantile_pd, isotonic_objective, l0_penalized_objective,
    l2e_objective, lad_objective, lowrank_objective, multinomial_loglik, pd_penalized_objective, quantile_objective,
    AnnealSchedule, IsotonicConfig, MultinomialData, MultinomialModel, QuantileSpec, RegressionData,
};
use crate::mmengine::{write_trace, ConvergenceDiagnostics, FitResult, MMOptions, TraceRow};
use crate::simdata::{quantile_bandwidth, sparse_bandwidth};

/// Default smoothing for the nuclear norm envelope.
pub const LOWRANK_MU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lad,
    Quantile,
    SparseQuantilePd,
    SparseQuantileL0,
    L2e,
    IsotonicL2e,
    Logistic,
    Multinomial,
    LowrankMultinomial,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lad => "lad",
            ModelKind::Quantile => "quantile",
            ModelKind::SparseQuantilePd => "sparse-quantile-pd",
            ModelKind::SparseQuantileL0 => "sparse-quantile-l0",
            ModelKind::L2e => "l2e",
            ModelKind::IsotonicL2e => "isotonic-l2e",
            ModelKind::Logistic => "logistic",
            ModelKind::Multinomial => "multinomial",
            ModelKind::LowrankMultinomial => "lowrank-multinomial",
        }
    }

    fn categorical(self) -> bool {
        matches!(self, ModelKind::Multinomial | ModelKind::LowrankMultinomial)
    }
}

/// Everything `fit` needs. Hyperparameters left `None` take model defaults
/// where one exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    pub q: Option<f64>,
    pub mu: Option<f64>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub c: Option<usize>,
    pub input: PathBuf,
    pub response: String,
    pub intercept: InterceptMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub opts: MMOptions,
}

impl FitConfig {
    pub fn new(model: ModelKind, input: impl Into<PathBuf>) -> Self {
        Self {
            model,
            q: None,
            mu: None,
            k: None,
            lambda: None,
            alpha: None,
            c: None,
            input: input.into(),
            response: "y".into(),
            intercept: InterceptMode::Auto,
            output: None,
            seed: 0,
            opts: MMOptions::default(),
        }
    }

    /// Checks required flags and ranges before any data is read.
    pub fn validate(&self) -> Result<()> {
        let need = |present: bool, flag: &str| {
            if present {
                Ok(())
            } else {
                Err(MmError::input(format!("model `{}` requires --{flag}", self.model.name())))
            }
        };
        match self.model {
            ModelKind::Quantile => need(self.q.is_some(), "q")?,
            ModelKind::SparseQuantilePd => {
                need(self.q.is_some(), "q")?;
                need(self.k.is_some(), "k")?;
            }
            ModelKind::SparseQuantileL0 => {
                need(self.q.is_some(), "q")?;
                need(self.lambda.is_some(), "lambda")?;
            }
            ModelKind::LowrankMultinomial => need(self.lambda.is_some(), "lambda")?,
            _ => {}
        }
        let bad = |flag: &str, v: String| Err(MmError::input(format!("--{flag} out of range: {v}")));
        if let Some(q) = self.q {
            if !(q > 0.0 && q < 1.0) {
                return bad("q", q.to_string());
            }
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad("mu", mu.to_string());
            }
        }
        if self.k == Some(0) {
            return bad("k", "0".into());
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("lambda", l.to_string());
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad("alpha", a.to_string());
            }
        }
        if let Some(c) = self.c {
            if c < 2 {
                return bad("c", c.to_string());
            }
        }
        if self.response.is_empty() {
            return Err(MmError::input("--response must name a column"));
        }
        self.opts.validate().map_err(|e| MmError::input(e.to_string()))
    }
}

/// Hyperparameters actually used, defaults filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
}

/// JSON written by `fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: u32,
    pub model: ModelKind,
    pub config: FitConfig,
    pub hyper: Hyper,
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
    /// Regression coefficients; fitted means for `isotonic-l2e`; the
    /// column-major `p x (c - 1)` matrix for the multinomial models.
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    pub factorizations: FactorTally,
    pub diagnostics: ConvergenceDiagnostics,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlyingness: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_violation: Option<f64>,
    pub time_seconds: f64,
}

impl FitReport {
    fn base(config: &FitConfig, hyper: Hyper, design: &Design, fit: &FitResult, coefficients: Vec<f64>) -> Self {
        Self {
            schema: SCHEMA,
            model: config.model,
            config: config.clone(),
            hyper,
            n: design.x.nrows(),
            p: design.x.ncols(),
            columns: design.names.clone(),
            coefficients,
            objective: fit.objective,
            iterations: fit.iterations,
            converged: fit.converged,
            restarts: fit.restarts,
            factorizations: fit.factorizations,
            diagnostics: fit.diagnostics.clone(),
            warnings: fit.warnings.clone(),
            sparse: None,
            support: None,
            lambda_final: None,
            tau: None,
            weights: None,
            outlyingness: None,
            max_violation: None,
            time_seconds: 0.0,
        }
    }

    /// The estimate to score against a truth: the sparse projection when
    /// there is one.
    pub fn estimate(&self) -> &[f64] {
        self.sparse.as_deref().unwrap_or(&self.coefficients)
    }
}

pub(crate) fn load_design(config: &FitConfig) -> Result<Design> {
    let table = read_table(&config.input)?;
    let mode = if config.model == ModelKind::IsotonicL2e { InterceptMode::None } else { config.intercept };
    split_design(&table, &config.response, mode)
}

pub(crate) fn regression_data(design: &Design) -> Result<RegressionData> {
    let data = RegressionData::new(design.x.clone(), design.y.clone())?;
    Ok(RegressionData { intercept: design.intercept, ..data })
}

/// Category codes `1..=c` to labels `0..c`.
pub(crate) fn multinomial_data(design: &Design, c: Option<usize>) -> Result<MultinomialData> {
    let mut labels = Vec::with_capacity(design.y.len());
    for &v in design.y.iter() {
        if v.fract() != 0.0 || v < 1.0 {
            return Err(MmError::input(format!("category codes must be integers 1..c, found {v}")));
        }
        labels.push(v as usize - 1);
    }
    let max = labels.iter().max().map_or(0, |m| m + 1);
    let c = c.unwrap_or(max);
    if max > c {
        return Err(MmError::input(format!("category code {max} exceeds --c {c}")));
    }
    if c < 2 {
        return Err(MmError::input("multinomial models need at least two categories"));
    }
    MultinomialData::new(design.x.clone(), labels, c, design.intercept)
}

fn quantile_spec(config: &FitConfig, mu: f64) -> Result<QuantileSpec> {
    QuantileSpec::new(config.q.expect("validated"), mu).map_err(|e| MmError::input(e.to_string()))
}

/// Fits the configured model without writing anything.
pub fn run_fit(config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    let design = load_design(config)?;
    let (n, p) = design.x.shape();
    let opts = &config.opts;
    let start = Instant::now();
    let mut hyper = Hyper::default();
    let mut report = match config.model {
        ModelKind::Lad => {
            let data = regression_data(&design)?;
            let mu = config.mu.unwrap_or_else(|| quantile_bandwidth(n, p));
            hyper.mu = Some(mu);
            let fit = fit_lad(&data, mu, opts)?;
            FitReport::base(config, hyper, &design, &fit, fit.beta.as_slice().to_vec())
        }
        ModelKind::Quantile => {
            let data = regression_data(&design)?;
            let mu = config.mu.unwrap_or_else(|| quantile_bandwidth(n, p));
            let spec = quantile_spec(config, mu)?;
            hyper.q = Some(spec.q);
            hyper.mu = Some(mu);
            let fit = fit_quantile(&data, spec, opts)?;
            FitReport::base(config, hyper, &design, &fit, fit.beta.as_slice().to_vec())
        }
        ModelKind::SparseQuantilePd | ModelKind::SparseQuantileL0 => {
            let data = regression_data(&design)?;
            let q = config.q.expect("validated");
            let mu = config.mu.unwrap_or_else(|| sparse_bandwidth(n, p, q));
            let spec = quantile_spec(config, mu)?;
            hyper.q = Some(q);
            hyper.mu = Some(mu);
            let sf = if config.model == ModelKind::SparseQuantilePd {
                hyper.k = config.k;
                fit_sparse_quantile_pd(&data, spec, config.k.expect("validated"), &AnnealSchedule::default(), opts)?
            } else {
                let (lambda, alpha) = (config.lambda.expect("validated"), config.alpha.unwrap_or(mu));
                hyper.lambda = Some(lambda);
                hyper.alpha = Some(alpha);
                fit_sparse_quantile_l0(&data, spec, lambda, alpha, opts)?
            };
            let mut r = FitReport::base(config, hyper, &design, &sf.fit, sf.fit.beta.as_slice().to_vec());
            r.sparse = Some(sf.sparse.as_slice().to_vec());
            r.support = Some(sf.support.clone());
            r.lambda_final = Some(sf.lambda_final);
            if config.model == ModelKind::SparseQuantilePd {
                trace_history(opts, &sf.fit)?;
            }
            r
        }
        ModelKind::L2e => {
            let data = regression_data(&design)?;
            let fit = fit_l2e(&data, opts)?;
            let mut r = FitReport::base(config, hyper, &design, &fit.fit, fit.state.beta.as_slice().to_vec());
            r.tau = Some(fit.state.tau);
            r.weights = Some(fit.state.weights.as_slice().to_vec());
            r.outlyingness = Some(fit.state.outlyingness().as_slice().to_vec());
            r
        }
        ModelKind::IsotonicL2e => {
            let fit = fit_isotonic_l2e(&design.y, &IsotonicConfig::default(), opts)?;
            trace_history(opts, &fit.fit)?;
            let mut r = FitReport::base(config, hyper, &design, &fit.fit, fit.beta.as_slice().to_vec());
            r.p = 0;
            r.columns = Vec::new();
            r.tau = Some(fit.tau);
            r.weights = Some(fit.weights.as_slice().to_vec());
            r.outlyingness = Some(fit.outlyingness.as_slice().to_vec());
            r.max_violation = Some(fit.max_violation);
            r.lambda_final = Some(fit.lambda_final);
            r
        }
        ModelKind::Logistic => {
            let data = regression_data(&design)?;
            data.check_binary()?;
            let fit = fit_logistic(&data, opts)?;
            FitReport::base(config, hyper, &design, &fit, fit.beta.as_slice().to_vec())
        }
        ModelKind::Multinomial | ModelKind::LowrankMultinomial => {
            let data = multinomial_data(&design, config.c)?;
            hyper.c = Some(data.c);
            let fit = if config.model == ModelKind::Multinomial {
                fit_multinomial(&data, opts)?
            } else {
                let mu = config.mu.unwrap_or(LOWRANK_MU);
                hyper.mu = Some(mu);
                hyper.lambda = config.lambda;
                fit_lowrank_multinomial(&data, config.lambda.expect("validated"), mu, opts)?
            };
            FitReport::base(config, hyper, &design, &fit.fit, fit.model.b.as_slice().to_vec())
        }
    };
    report.time_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs the fit, writes the report, and turns an exhausted iteration budget
/// into [`MmError::NotConverged`] after the report is written.
pub fn cmd_fit(config: &FitConfig) -> Result<FitReport> {
    let report = run_fit(config)?;
    write_json(config.output.as_deref(), &report)?;
    if !report.converged {
        return Err(MmError::NotConverged(report.iterations));
    }
    Ok(report)
}

/// Reloads the data named in `report` and evaluates the model's criterion
/// at the reported estimate.
pub fn rescore(report: &FitReport) -> Result<f64> {
    let config = &report.config;
    let design = load_design(config)?;
    let h = &report.hyper;
    let missing = |what: &str| MmError::input(format!("report lacks `{what}`"));
    let beta = DVector::from_column_slice(&report.coefficients);
    let spec = || -> Result<QuantileSpec> {
        QuantileSpec::new(h.q.ok_or_else(|| missing("hyper.q"))?, h.mu.ok_or_else(|| missing("hyper.mu"))?)
    };
    if report.model.categorical() {
        let data = multinomial_data(&design, h.c)?;
        let cols = data.c - 1;
        if beta.len() != data.p() * cols {
            return Err(MmError::input("coefficient count does not match the data"));
        }
        let model = MultinomialModel::new(DMatrix::from_column_slice(data.p(), cols, beta.as_slice()), data.c)?;
        return match report.model {
            ModelKind::Multinomial => Ok(-multinomial_loglik(&model, &data.x, &data.labels)? / data.n() as f64),
            _ => lowrank_objective(
                &data,
                &model,
                h.lambda.ok_or_else(|| missing("hyper.lambda"))?,
                h.mu.ok_or_else(|| missing("hyper.mu"))?,
            ),
        };
    }
    if report.model == ModelKind::IsotonicL2e {
        let tau = report.tau.ok_or_else(|| missing("tau"))?;
        let lambda = report.lambda_final.ok_or_else(|| missing("lambda_final"))?;
        if beta.len() != design.y.len() {
            return Err(MmError::input("fitted means do not match the response length"));
        }
        return Ok(isotonic_objective(&design.y, &beta, tau, lambda, false));
    }
    let data = regression_data(&design)?;
    if beta.len() != data.p() {
        return Err(MmError::input("coefficient count does not match the data"));
    }
    Ok(match report.model {
        ModelKind::Lad => lad_objective(&data.x, &data.y, &beta, h.mu.ok_or_else(|| missing("hyper.mu"))?),
        ModelKind::Quantile => quantile_objective(&data.x, &data.y, &beta, spec()?),
        ModelKind::SparseQuantilePd => pd_penalized_objective(
            &data,
            spec()?,
            h.k.ok_or_else(|| missing("hyper.k"))?,
            report.lambda_final.ok_or_else(|| missing("lambda_final"))?,
            &beta,
        )?,
        ModelKind::SparseQuantileL0 => l0_penalized_objective(
            &data,
            spec()?,
            h.lambda.ok_or_else(|| missing("hyper.lambda"))?,
            h.alpha.ok_or_else(|| missing("hyper.alpha"))?,
            &beta,
        )?,
        ModelKind::L2e => l2e_objective(&(&data.y - &data.x * &beta), report.tau.ok_or_else(|| missing("tau"))?),
        ModelKind::Logistic => -bernoulli_loglik(&data.x, &data.y, &beta) / data.n() as f64,
        _ => unreachable!("handled above"),
    })
}

/// Trace for annealed fits, rebuilt from the objective history across all
/// stages. Gradient norms and restart flags are not kept across stages.
fn trace_history(opts: &MMOptions, fit: &FitResult) -> Result<()> {
    let Some(path) = opts.trace_path.as_deref() else {
        return Ok(());
    };
    write_history_trace(path, &fit.history)
}

pub(crate) fn write_history_trace(path: &Path, history: &[f64]) -> Result<()> {
    let rows: Vec<TraceRow> = history
        .iter()
        .enumerate()
        .map(|(iter, &objective)| TraceRow { iter, objective, grad_norm: None, restarted: 0 })
        .collect();
    write_trace(path, &rows)
}
