//! `metrics`: support recovery and error of an estimate against a truth.

use std::fs::File;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::FitReport;
use super::io::{design_only, read_table, read_vector, write_json, InterceptMode};
use super::SCHEMA;
use crate::decompose::FactorTally;
use crate::error::{MmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    /// Share of true nonzero penalized coordinates that are nonzero in the
    /// estimate; 1 when the truth has none.
    pub tpr: f64,
    /// Share of true zero penalized coordinates that are nonzero in the
    /// estimate; 0 when the truth has none.
    pub fpr: f64,
    /// `|beta_hat - beta*|_2`.
    pub ee: f64,
    /// `|X beta_hat - X beta*|_2`.
    pub pe: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factorizations: Option<FactorTally>,
}

/// Selection and error metrics. With `intercept` set, coordinate 0 is left
/// out of the rates.
pub fn selection_metrics(
    beta_hat: &DVector<f64>,
    beta_star: &DVector<f64>,
    x: &DMatrix<f64>,
    intercept: bool,
) -> Result<MetricsReport> {
    if beta_hat.len() != beta_star.len() {
        return Err(MmError::input(format!(
            "estimate has {} coefficients but truth has {}",
            beta_hat.len(),
            beta_star.len()
        )));
    }
    if x.ncols() != beta_star.len() {
        return Err(MmError::input(format!(
            "design has {} columns but coefficients have length {}",
            x.ncols(),
            beta_star.len()
        )));
    }
    let skip = usize::from(intercept).min(beta_star.len());
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&h, &s) in beta_hat.iter().zip(beta_star.iter()).skip(skip) {
        if s != 0.0 {
            pos += 1;
            tp += usize::from(h != 0.0);
        } else {
            neg += 1;
            fp += usize::from(h != 0.0);
        }
    }
    let diff = beta_hat - beta_star;
    Ok(MetricsReport {
        schema: SCHEMA,
        tpr: if pos == 0 { 1.0 } else { tp as f64 / pos as f64 },
        fpr: if neg == 0 { 0.0 } else { fp as f64 / neg as f64 },
        ee: diff.norm(),
        pe: (x * diff).norm(),
        time_seconds: None,
        iterations: None,
        factorizations: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsArgs {
    pub beta_hat: PathBuf,
    pub beta_star: PathBuf,
    /// CSV whose design columns define `X`.
    pub data: PathBuf,
    pub response: String,
    pub intercept: InterceptMode,
    pub output: Option<PathBuf>,
}

/// Loads the vectors and design, computes the metrics and writes them. A
/// fit report as `beta_hat` also contributes its timing, iteration and
/// factorization counts.
pub fn cmd_metrics(args: &MetricsArgs) -> Result<MetricsReport> {
    let hat = DVector::from_vec(read_vector(&args.beta_hat)?);
    let star = DVector::from_vec(read_vector(&args.beta_star)?);
    let design = design_only(&read_table(&args.data)?, &args.response, args.intercept);
    let mut report = selection_metrics(&hat, &star, &design.x, design.intercept)?;
    if args.beta_hat.extension().is_some_and(|e| e == "json") {
        if let Ok(fit) = serde_json::from_reader::<_, FitReport>(File::open(&args.beta_hat)?) {
            report.time_seconds = Some(fit.time_seconds);
            report.iterations = Some(fit.iterations);
            report.factorizations = Some(fit.factorizations);
        }
    }
    write_json(args.output.as_deref(), &report)?;
    Ok(report)
}
