//! `simulate`: seeded data sets written as CSV plus a JSON sidecar.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::io::{write_json, write_table};
use super::SCHEMA;
use crate::error::{MmError, Result};
use crate::simdata::{
    default_truth_beta, gen_design, gen_glm_response, gen_l2e_response, gen_quantile_response, lowrank_truth,
    multinomial_truth, sparse_truth_beta, Contamination, GlmFamily, GlmResponse, SimSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Heteroskedastic quantile response, truth `(1, 0.1, ..., 0.1)`.
    Quantile,
    /// Heteroskedastic quantile response with the sparse truth.
    Sparse,
    /// Gaussian response with optional response and covariate shifts.
    L2e,
    /// Bernoulli response, truth `(1, 0.1, ..., 0.1)`.
    Logistic,
    /// Categorical response, Uniform[0, 0.2] coefficients.
    Multinomial,
    /// Categorical response, low-rank Uniform[0, 3] coefficients.
    Lowrank,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    pub scenario: Scenario,
    pub spec: SimSpec,
    /// Categories for the categorical scenarios.
    pub c: usize,
    /// Rank of the low-rank truth.
    pub rank: usize,
    /// CSV path; the sidecar goes next to it with extension `.json`.
    pub output: PathBuf,
}

/// Sidecar JSON describing a simulated CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSidecar {
    pub schema: u32,
    pub scenario: Scenario,
    pub spec: SimSpec,
    pub columns: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_star: Option<Vec<f64>>,
    /// Reference-coded `p x (c - 1)` truth, one inner vector per row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_star: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

/// A simulated data set: design with intercept column, response and
/// description.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sidecar: SimSidecar,
}

fn labels_as_codes(r: GlmResponse) -> DVector<f64> {
    match r {
        GlmResponse::Binary(y) => y,
        GlmResponse::Labels(l) => DVector::from_iterator(l.len(), l.into_iter().map(|v| (v + 1) as f64)),
    }
}

/// Generates the data set without writing it.
pub fn simulate(args: &SimulateArgs) -> Result<Simulated> {
    let spec = &args.spec;
    spec.validate().map_err(|e| MmError::input(e.to_string()))?;
    let seed = spec.seed;
    let x = gen_design(spec)?;
    let p = spec.p;
    let mut columns: Vec<String> =
        std::iter::once("intercept".to_string()).chain((1..p).map(|j| format!("x{j}"))).collect();
    columns.push("y".into());
    let mut sidecar = SimSidecar {
        schema: SCHEMA,
        scenario: args.scenario,
        spec: spec.clone(),
        columns,
        response: "y".into(),
        beta_star: None,
        b_star: None,
        categories: None,
        rank: None,
    };
    let categorical = matches!(args.scenario, Scenario::Multinomial | Scenario::Lowrank);
    if categorical && args.c < 2 {
        return Err(MmError::input("--c must be at least 2"));
    }
    let (x, y) = match args.scenario {
        Scenario::Quantile | Scenario::Sparse => {
            let beta = if args.scenario == Scenario::Sparse {
                sparse_truth_beta(p).map_err(|e| MmError::input(e.to_string()))?
            } else {
                default_truth_beta(p)
            };
            let q = spec.quantile_q.unwrap_or(0.5);
            let y = gen_quantile_response(&x, &beta, q, spec.noise, seed)?;
            sidecar.beta_star = Some(beta.as_slice().to_vec());
            (x, y)
        }
        Scenario::L2e => {
            let beta = default_truth_beta(p);
            let cont = spec.contamination.unwrap_or(Contamination { fraction: 0.0, shift: 0.0 });
            let (y, xc) = gen_l2e_response(&x, &beta, cont, seed)?;
            sidecar.beta_star = Some(beta.as_slice().to_vec());
            (xc, y)
        }
        Scenario::Logistic => {
            let beta = default_truth_beta(p);
            let b = DMatrix::from_column_slice(p, 1, beta.as_slice());
            let y = labels_as_codes(gen_glm_response(&x, &b, GlmFamily::Bernoulli, seed)?);
            sidecar.beta_star = Some(beta.as_slice().to_vec());
            (x, y)
        }
        Scenario::Multinomial | Scenario::Lowrank => {
            let b = if args.scenario == Scenario::Lowrank {
                sidecar.rank = Some(args.rank);
                lowrank_truth(p, args.c, args.rank, seed).map_err(|e| MmError::input(e.to_string()))?
            } else {
                multinomial_truth(p, args.c, seed).map_err(|e| MmError::input(e.to_string()))?
            };
            let y = labels_as_codes(gen_glm_response(&x, &b, GlmFamily::Multinomial(args.c), seed)?);
            sidecar.b_star = Some(b.row_iter().map(|r| r.iter().copied().collect()).collect());
            sidecar.categories = Some(args.c);
            (x, y)
        }
    };
    Ok(Simulated { x, y, sidecar })
}

/// Path of the sidecar for a CSV path.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Generates and writes the CSV and its sidecar.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimSidecar> {
    let sim = simulate(args)?;
    let mut table = sim.x.clone().insert_column(sim.x.ncols(), 0.0);
    table.set_column(sim.x.ncols(), &sim.y);
    write_table(&args.output, &sim.sidecar.columns, &table)?;
    write_json(Some(&sidecar_path(&args.output)), &sim.sidecar)?;
    Ok(sim.sidecar)
}
