//! Sparse quantile regression: annealed proximal distance to the sparsity
//! set, and the Moreau envelope of the l0 norm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quantile::{gram_lmax, quantile_objective};
use super::{tallied, with_tally, QuantileSpec, RegressionData};
use crate::decompose::FactorCache;
use crate::error::{MmError, Result};
use crate::mmengine::{run_mm, FitResult, MMOptions, MmProblem};
use crate::prox::{project_sparsity, prox_l0, soft_threshold};

/// Geometric schedule for the distance penalty constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub lambda_init: f64,
    pub growth: f64,
    pub lambda_max: f64,
    pub inner_tol: f64,
    pub outer_max: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self { lambda_init: 1.0, growth: 1.2, lambda_max: 1e8, inner_tol: 1e-6, outer_max: 1000 }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0 && self.lambda_init <= self.lambda_max) {
            return Err(MmError::domain("need 0 < lambda_init <= lambda_max"));
        }
        if !(self.growth > 1.0) {
            return Err(MmError::domain(format!("growth must exceed 1, got {}", self.growth)));
        }
        if !(self.inner_tol > 0.0) || self.outer_max == 0 {
            return Err(MmError::domain("inner_tol must be positive and outer_max at least 1"));
        }
        Ok(())
    }

    /// The penalty constants this schedule visits.
    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::successors(Some(self.lambda_init), move |l| Some(l * self.growth))
            .take_while(move |&l| l <= self.lambda_max)
            .take(self.outer_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SparsityPenalty {
    ProxDistance { k: usize, anneal: AnnealSchedule },
    L0Moreau { lambda: f64, alpha: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseFit {
    /// `fit.beta` is the dense minimizer.
    pub fit: FitResult,
    /// Projection of the dense minimizer, intercept untouched.
    pub sparse: DVector<f64>,
    /// Nonzero penalized coordinates of `sparse`.
    pub support: Vec<usize>,
    /// Final penalty constant reached.
    pub lambda_final: f64,
}

/// Projection acting on the penalized coordinates only.
#[derive(Debug, Clone, Copy)]
enum Projector {
    Sparsity(usize),
    L0(f64),
}

impl Projector {
    /// Returns the projected vector and the penalty value at `beta`
    /// (half squared distance, or the l0 envelope).
    fn apply(&self, beta: &DVector<f64>, skip: usize) -> Result<(DVector<f64>, f64)> {
        let tail = beta.rows(skip, beta.len() - skip).into_owned();
        let (point, penalty) = match *self {
            Projector::Sparsity(k) => {
                let r = project_sparsity(&tail, k.min(tail.len()))?;
                (r.point, 0.5 * r.sq_distance)
            }
            Projector::L0(alpha) => {
                let r = prox_l0(&tail, alpha)?;
                (r.point, r.envelope_value)
            }
        };
        let mut full = beta.clone();
        full.rows_mut(skip, point.len()).copy_from(&point);
        Ok((full, penalty))
    }
}

/// Smoothed quantile loss plus `lambda * pen(beta)`.
///
/// For the distance penalty `pen = dist^2 / 2` and the surrogate weight is
/// `lambda`; for the l0 envelope the surrogate weight is `lambda / alpha`.
struct PenalizedQuantile<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    spec: QuantileSpec,
    cache: &'a FactorCache,
    projector: Projector,
    lambda: f64,
    skip: usize,
    lmax: f64,
}

impl PenalizedQuantile<'_> {
    fn shift(&self) -> f64 {
        match self.projector {
            Projector::Sparsity(_) => self.lambda,
            Projector::L0(alpha) => self.lambda / alpha,
        }
    }

    fn penalty(&self, beta: &DVector<f64>) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let (_, pen) = self.projector.apply(beta, self.skip).expect("finite iterate");
        self.lambda * pen
    }
}

impl MmProblem for PenalizedQuantile<'_> {
    fn objective(&mut self, beta: &DVector<f64>) -> f64 {
        if beta.iter().any(|v| !v.is_finite()) {
            return f64::NAN;
        }
        quantile_objective(self.x, self.y, beta, self.spec) + self.penalty(beta)
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        let QuantileSpec { q, mu } = self.spec;
        let n = self.y.len() as f64;
        let r = self.y - self.x * anchor;
        let yt = DVector::from_iterator(
            r.len(),
            r.iter().zip(self.y.iter()).map(|(&ri, &yi)| yi - soft_threshold(ri, mu) + (2.0 * q - 1.0) * mu),
        );
        let scale = 1.0 / (2.0 * n * mu);
        let mut rhs = self.x.tr_mul(&yt) * scale;
        let shift = self.shift();
        if shift > 0.0 {
            let (p, _) = self.projector.apply(anchor, self.skip)?;
            rhs += p * shift;
        }
        self.cache.solve_ridge_spectral(scale, shift, &rhs)
    }

    fn gradient(&mut self, beta: &DVector<f64>) -> Option<DVector<f64>> {
        if !matches!(self.projector, Projector::Sparsity(_)) && self.lambda > 0.0 {
            return None;
        }
        let QuantileSpec { q, mu } = self.spec;
        let n = self.y.len() as f64;
        let psi = (self.y - self.x * beta).map(|r| (q - 0.5) + 0.5 * (r / mu).clamp(-1.0, 1.0));
        let mut g = -self.x.tr_mul(&psi) / n;
        if self.lambda > 0.0 {
            let (p, _) = self.projector.apply(beta, self.skip).ok()?;
            g += (beta - p) * self.lambda;
        }
        Some(g)
    }

    fn lipschitz(&self) -> Option<f64> {
        let n = self.y.len() as f64;
        Some(self.lmax / (2.0 * n * self.spec.mu) + self.shift())
    }

    fn surrogate_value(&mut self, beta: &DVector<f64>, anchor: &DVector<f64>) -> Option<f64> {
        let QuantileSpec { q, mu } = self.spec;
        let n = self.y.len() as f64;
        let rm = self.y - self.x * anchor;
        let r = self.y - self.x * beta;
        let loss: f64 = r
            .iter()
            .zip(rm.iter())
            .map(|(&ri, &rmi)| {
                let z = soft_threshold(rmi, mu);
                (q - 0.5) * ri + 0.5 * (z.abs() + (ri - z).powi(2) / (2.0 * mu) + 0.5 * mu)
            })
            .sum::<f64>()
            / n;
        if self.lambda == 0.0 {
            return Some(loss);
        }
        let (p, _) = self.projector.apply(anchor, self.skip).ok()?;
        let pen = match self.projector {
            Projector::Sparsity(_) => 0.5 * self.lambda * (beta - &p).norm_squared(),
            Projector::L0(alpha) => {
                let nnz = p.rows(self.skip, p.len() - self.skip).iter().filter(|v| **v != 0.0).count() as f64;
                self.lambda * (nnz + (beta - &p).norm_squared() / (2.0 * alpha))
            }
        };
        Some(loss + pen)
    }
}

fn check_spectral(cache: &FactorCache) -> Result<()> {
    if cache.spectral().is_none() {
        return Err(MmError::State("sparse quantile fits need a spectral factor of the Gram matrix".into()));
    }
    Ok(())
}

fn support_of(sparse: &DVector<f64>, skip: usize) -> Vec<usize> {
    (skip..sparse.len()).filter(|&j| sparse[j] != 0.0).collect()
}

/// Initial point: least squares with a tiny spectral ridge so that `p > n`
/// designs are handled.
fn ridge_start(data: &RegressionData, cache: &FactorCache) -> Result<DVector<f64>> {
    let sp = cache.spectral().expect("checked by caller");
    let ridge = 1e-8 * sp.values[0].max(1e-300);
    cache.solve_ridge_spectral(1.0, ridge, &data.x.tr_mul(&data.y))
}

/// Distance-to-sparsity-set quantile regression with annealed penalty.
pub fn fit_sparse_quantile_pd(
    data: &RegressionData,
    spec: QuantileSpec,
    k: usize,
    sched: &AnnealSchedule,
    opts: &MMOptions,
) -> Result<SparseFit> {
    let (mut fit, tally) = tallied(|| {
        let cache = FactorCache::spectral_only(&data.x)?;
        fit_sparse_quantile_pd_with(data, spec, k, sched, &cache, None, opts)
    })?;
    fit.fit = with_tally(fit.fit, tally);
    Ok(fit)
}

/// [`fit_sparse_quantile_pd`] against a cache holding the spectral factor of `X^T X`.
pub fn fit_sparse_quantile_pd_with(
    data: &RegressionData,
    spec: QuantileSpec,
    k: usize,
    sched: &AnnealSchedule,
    cache: &FactorCache,
    init: Option<DVector<f64>>,
    opts: &MMOptions,
) -> Result<SparseFit> {
    let spec = QuantileSpec::new(spec.q, spec.mu)?;
    sched.validate()?;
    check_spectral(cache)?;
    let skip = data.first_penalized();
    let free = data.p() - skip;
    let mut warnings = Vec::new();
    if k >= free {
        warnings.push(format!("sparsity level {k} leaves all {free} penalized coefficients free"));
    }
    let mut beta = match init {
        Some(b) => b,
        None => ridge_start(data, cache)?,
    };
    let inner_opts = MMOptions { tol: sched.inner_tol, trace_path: None, ..opts.clone() };
    let mut total = FitResult::empty(beta.clone());
    let mut lambda_final = sched.lambda_init;
    for lambda in sched.lambdas() {
        let mut problem = PenalizedQuantile {
            x: &data.x,
            y: &data.y,
            spec,
            cache,
            projector: Projector::Sparsity(k.min(free)),
            lambda,
            skip,
            lmax: gram_lmax(cache),
        };
        let stage = run_mm(&mut problem, beta, &inner_opts)?;
        beta = stage.beta.clone();
        total.absorb_stage(stage);
        lambda_final = lambda;
        let (_, half_sq) = Projector::Sparsity(k.min(free)).apply(&beta, skip)?;
        let dist = (2.0 * half_sq).sqrt();
        if dist <= 1e-6 * beta.norm() {
            break;
        }
    }
    let (sparse, _) = Projector::Sparsity(k.min(free)).apply(&total.beta, skip)?;
    total.warnings.extend(warnings);
    Ok(SparseFit { support: support_of(&sparse, skip), sparse, fit: total, lambda_final })
}

/// Quantile regression with penalty `lambda * M_{alpha |.|_0}`.
pub fn fit_sparse_quantile_l0(
    data: &RegressionData,
    spec: QuantileSpec,
    lambda: f64,
    alpha: f64,
    opts: &MMOptions,
) -> Result<SparseFit> {
    let (mut fit, tally) = tallied(|| {
        let cache = FactorCache::spectral_only(&data.x)?;
        fit_sparse_quantile_l0_with(data, spec, lambda, alpha, &cache, None, opts)
    })?;
    fit.fit = with_tally(fit.fit, tally);
    Ok(fit)
}

pub fn fit_sparse_quantile_l0_with(
    data: &RegressionData,
    spec: QuantileSpec,
    lambda: f64,
    alpha: f64,
    cache: &FactorCache,
    init: Option<DVector<f64>>,
    opts: &MMOptions,
) -> Result<SparseFit> {
    let spec = QuantileSpec::new(spec.q, spec.mu)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(MmError::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MmError::domain(format!("alpha must be positive, got {alpha}")));
    }
    check_spectral(cache)?;
    let skip = data.first_penalized();
    let init = match init {
        Some(b) => b,
        None => ridge_start(data, cache)?,
    };
    let mut problem = PenalizedQuantile {
        x: &data.x,
        y: &data.y,
        spec,
        cache,
        projector: Projector::L0(alpha),
        lambda,
        skip,
        lmax: gram_lmax(cache),
    };
    let fit = run_mm(&mut problem, init, opts)?;
    let (sparse, _) = Projector::L0(alpha).apply(&fit.beta, skip)?;
    Ok(SparseFit { support: support_of(&sparse, skip), sparse, fit, lambda_final: lambda })
}

/// Smoothed quantile loss plus `lambda * dist(beta, S_k)^2 / 2`, the
/// criterion of one proximal distance stage.
pub fn pd_penalized_objective(
    data: &RegressionData,
    spec: QuantileSpec,
    k: usize,
    lambda: f64,
    beta: &DVector<f64>,
) -> Result<f64> {
    let skip = data.first_penalized();
    let free = data.p() - skip;
    let pen = if lambda == 0.0 { 0.0 } else { lambda * Projector::Sparsity(k.min(free)).apply(beta, skip)?.1 };
    Ok(quantile_objective(&data.x, &data.y, beta, spec) + pen)
}

/// Smoothed quantile loss plus the l0 envelope penalty, as minimized by
/// [`fit_sparse_quantile_l0`].
pub fn l0_penalized_objective(
    data: &RegressionData,
    spec: QuantileSpec,
    lambda: f64,
    alpha: f64,
    beta: &DVector<f64>,
) -> Result<f64> {
    let (_, env) = Projector::L0(alpha).apply(beta, data.first_penalized())?;
    Ok(quantile_objective(&data.x, &data.y, beta, spec) + lambda * env)
}

#[cfg(test)]
mod tests {
    use super::super::testing::{design, normal, probes, rng};
    use super::*;
    use crate::mmengine::surrogate_gaps;

    #[test]
    fn penalized_surrogates_majorize() {
        let mut g = rng(6);
        let x = design(&mut g, 70, 6);
        let y = normal(&mut g, 70, 1.0);
        let cache = FactorCache::spectral_only(&x).unwrap();
        let spec = QuantileSpec::new(0.3, 0.2).unwrap();
        for projector in [Projector::Sparsity(2), Projector::L0(0.3)] {
            for lambda in [0.0, 0.5, 4.0] {
                let mut pr = PenalizedQuantile {
                    x: &x,
                    y: &y,
                    spec,
                    cache: &cache,
                    projector,
                    lambda,
                    skip: 1,
                    lmax: gram_lmax(&cache),
                };
                for _ in 0..100 {
                    let a = normal(&mut g, 6, 1.0);
                    let gaps = surrogate_gaps(&mut pr, &a, &probes(&mut g, &a, 100, 1.0)).unwrap();
                    assert!(gaps.touch <= 1e-10 && gaps.excess <= 1e-10, "{projector:?} {lambda}: {gaps:?}");
                }
            }
        }
    }

    #[test]
    fn intercept_is_never_projected() {
        let beta = DVector::from_vec(vec![0.01, 3.0, -0.2, 0.1]);
        let (p, pen) = Projector::Sparsity(1).apply(&beta, 1).unwrap();
        assert_eq!(p.as_slice(), &[0.01, 3.0, 0.0, 0.0]);
        assert!((pen - 0.5 * 0.05).abs() < 1e-15);
        let (p, _) = Projector::L0(0.5).apply(&beta, 1).unwrap();
        assert_eq!(p.as_slice(), &[0.01, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn anneal_schedule_is_geometric() {
        let s = AnnealSchedule { lambda_init: 1.0, growth: 2.0, lambda_max: 10.0, inner_tol: 1e-6, outer_max: 100 };
        assert_eq!(s.lambdas().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 8.0]);
        assert!(AnnealSchedule { growth: 1.0, ..s }.validate().is_err());
    }
}
