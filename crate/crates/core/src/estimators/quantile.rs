use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{tallied, with_tally, RegressionData};
use crate::decompose::{build_cache_with_fallback, FactorCache};
use crate::error::{MmError, Result};
use crate::mmengine::{run_mm, FitResult, MMOptions, MmProblem};
use crate::prox::{huber, soft_threshold};

/// Quantile level and smoothing bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub q: f64,
    pub mu: f64,
}

impl QuantileSpec {
    pub fn new(q: f64, mu: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(MmError::domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(MmError::domain(format!("bandwidth must be positive, got {mu}")));
        }
        Ok(Self { q, mu })
    }
}

/// Largest eigenvalue of the Gram matrix, or a Gershgorin upper bound when
/// no spectral factor is cached.
pub(crate) fn gram_lmax(cache: &FactorCache) -> f64 {
    match cache.spectral() {
        Some(sp) => sp.values[0].max(0.0),
        None => cache.gram().row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
    }
}

fn residuals(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    y - x * beta
}

/// `sum_i M_{mu|.|}(r_i)`, the Huber envelope of the absolute residuals.
pub fn lad_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, mu: f64) -> f64 {
    residuals(x, y, beta).iter().map(|&r| huber(r, mu)).sum()
}

/// `(q - 1/2) r + C_mu(r) / 2` summed, without the `1/n`.
pub fn smoothed_quantile_loss(r: &DVector<f64>, spec: QuantileSpec) -> f64 {
    r.iter().map(|&ri| (spec.q - 0.5) * ri + 0.5 * (huber(ri, spec.mu) + 0.5 * spec.mu)).sum()
}

/// Mean smoothed check loss.
pub fn quantile_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, spec: QuantileSpec) -> f64 {
    smoothed_quantile_loss(&residuals(x, y, beta), spec) / y.len() as f64
}

/// Weights of the sharpest quadratic majorizer of the Huber envelope:
/// 1 inside the dead zone, `mu / |r|` outside.
pub fn lad_best_quadratic_weights(r: &DVector<f64>, mu: f64) -> DVector<f64> {
    r.map(|ri| if ri.abs() < mu { 1.0 } else { mu / ri.abs() })
}

/// Smoothed LAD with the Moreau surrogate `(1/2mu) sum (r_i - z_mi)^2`.
pub struct LadProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    mu: f64,
    cache: &'a FactorCache,
    lmax: f64,
}

impl<'a> LadProblem<'a> {
    pub fn new(data: &'a RegressionData, mu: f64, cache: &'a FactorCache) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(MmError::domain(format!("mu must be positive, got {mu}")));
        }
        Ok(Self { x: &data.x, y: &data.y, mu, cache, lmax: gram_lmax(cache) })
    }

    /// `y - prox_{mu|.|}(r)` at the anchor.
    pub fn shifted_responses(&self, anchor: &DVector<f64>) -> DVector<f64> {
        let r = residuals(self.x, self.y, anchor);
        self.y - r.map(|ri| soft_threshold(ri, self.mu))
    }
}

impl MmProblem for LadProblem<'_> {
    fn objective(&mut self, beta: &DVector<f64>) -> f64 {
        lad_objective(self.x, self.y, beta, self.mu)
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        let yt = self.shifted_responses(anchor);
        self.cache.solve_normal(&self.x.tr_mul(&yt))
    }

    fn gradient(&mut self, beta: &DVector<f64>) -> Option<DVector<f64>> {
        let psi = residuals(self.x, self.y, beta).map(|r| (r / self.mu).clamp(-1.0, 1.0));
        Some(-self.x.tr_mul(&psi))
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lmax / self.mu)
    }

    fn surrogate_value(&mut self, beta: &DVector<f64>, anchor: &DVector<f64>) -> Option<f64> {
        let rm = residuals(self.x, self.y, anchor);
        let r = residuals(self.x, self.y, beta);
        Some(
            r.iter()
                .zip(rm.iter())
                .map(|(&ri, &rmi)| {
                    let z = soft_threshold(rmi, self.mu);
                    z.abs() + (ri - z).powi(2) / (2.0 * self.mu)
                })
                .sum(),
        )
    }
}

/// Convolution-smoothed quantile regression, optionally with a ridge
/// `rho/2 |beta|^2` that makes the objective strongly convex.
pub struct QuantileProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    spec: QuantileSpec,
    ridge: f64,
    cache: &'a FactorCache,
    lmax: f64,
}

impl<'a> QuantileProblem<'a> {
    pub fn new(data: &'a RegressionData, spec: QuantileSpec, cache: &'a FactorCache) -> Self {
        Self { x: &data.x, y: &data.y, spec, ridge: 0.0, cache, lmax: gram_lmax(cache) }
    }

    /// Ridge-augmented variant; `cache` must hold a spectral factor.
    pub fn with_ridge(
        data: &'a RegressionData,
        spec: QuantileSpec,
        cache: &'a FactorCache,
        ridge: f64,
    ) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(MmError::domain(format!("ridge must be nonnegative, got {ridge}")));
        }
        if ridge > 0.0 && cache.spectral().is_none() {
            return Err(MmError::State("ridge-augmented quantile fit needs a spectral factor".into()));
        }
        Ok(Self { ridge, ..Self::new(data, spec, cache) })
    }

    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    /// `y - z_m + (2q - 1) mu` with `z_m = prox_{mu|.|}(r_m)`.
    pub fn shifted_responses(&self, anchor: &DVector<f64>) -> DVector<f64> {
        let QuantileSpec { q, mu } = self.spec;
        let r = residuals(self.x, self.y, anchor);
        DVector::from_iterator(
            r.len(),
            r.iter().zip(self.y.iter()).map(|(&ri, &yi)| yi - soft_threshold(ri, mu) + (2.0 * q - 1.0) * mu),
        )
    }
}

impl MmProblem for QuantileProblem<'_> {
    fn objective(&mut self, beta: &DVector<f64>) -> f64 {
        quantile_objective(self.x, self.y, beta, self.spec) + 0.5 * self.ridge * beta.norm_squared()
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = self.x.tr_mul(&self.shifted_responses(anchor));
        if self.ridge == 0.0 {
            self.cache.solve_normal(&rhs)
        } else {
            let scale = 1.0 / (2.0 * self.n() * self.spec.mu);
            self.cache.solve_ridge_spectral(scale, self.ridge, &(rhs * scale))
        }
    }

    fn gradient(&mut self, beta: &DVector<f64>) -> Option<DVector<f64>> {
        let QuantileSpec { q, mu } = self.spec;
        let psi = residuals(self.x, self.y, beta).map(|r| (q - 0.5) + 0.5 * (r / mu).clamp(-1.0, 1.0));
        Some(-self.x.tr_mul(&psi) / self.n() + beta * self.ridge)
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lmax / (2.0 * self.n() * self.spec.mu) + self.ridge)
    }

    fn strong_convexity(&self) -> Option<f64> {
        (self.ridge > 0.0).then_some(self.ridge)
    }

    fn surrogate_value(&mut self, beta: &DVector<f64>, anchor: &DVector<f64>) -> Option<f64> {
        let QuantileSpec { q, mu } = self.spec;
        let rm = residuals(self.x, self.y, anchor);
        let r = residuals(self.x, self.y, beta);
        let loss: f64 = r
            .iter()
            .zip(rm.iter())
            .map(|(&ri, &rmi)| {
                let z = soft_threshold(rmi, mu);
                (q - 0.5) * ri + 0.5 * (z.abs() + (ri - z).powi(2) / (2.0 * mu) + 0.5 * mu)
            })
            .sum();
        Some(loss / self.n() + 0.5 * self.ridge * beta.norm_squared())
    }
}

fn ols_start(data: &RegressionData, cache: &FactorCache) -> Result<DVector<f64>> {
    cache.solve_normal(&data.x.tr_mul(&data.y))
}

/// Smoothed LAD regression.
pub fn fit_lad(data: &RegressionData, mu: f64, opts: &MMOptions) -> Result<FitResult> {
    let (fit, tally) = tallied(|| {
        let cache = build_cache_with_fallback(&data.x, false)?;
        fit_lad_with(data, mu, &cache, None, opts)
    })?;
    Ok(with_tally(fit, tally))
}

/// [`fit_lad`] against a prebuilt cache, starting from OLS unless `init` is given.
pub fn fit_lad_with(
    data: &RegressionData,
    mu: f64,
    cache: &FactorCache,
    init: Option<DVector<f64>>,
    opts: &MMOptions,
) -> Result<FitResult> {
    let mut problem = LadProblem::new(data, mu, cache)?;
    let init = match init {
        Some(b) => b,
        None => ols_start(data, cache)?,
    };
    run_mm(&mut problem, init, opts)
}

/// Convolution-smoothed quantile regression.
pub fn fit_quantile(data: &RegressionData, spec: QuantileSpec, opts: &MMOptions) -> Result<FitResult> {
    let (fit, tally) = tallied(|| {
        let cache = build_cache_with_fallback(&data.x, false)?;
        fit_quantile_with(data, spec, &cache, None, opts)
    })?;
    Ok(with_tally(fit, tally))
}

pub fn fit_quantile_with(
    data: &RegressionData,
    spec: QuantileSpec,
    cache: &FactorCache,
    init: Option<DVector<f64>>,
    opts: &MMOptions,
) -> Result<FitResult> {
    let spec = QuantileSpec::new(spec.q, spec.mu)?;
    let mut problem = QuantileProblem::new(data, spec, cache);
    let init = match init {
        Some(b) => b,
        None => ols_start(data, cache)?,
    };
    run_mm(&mut problem, init, opts)
}
