//! Logistic and multinomial regression under Bohning's quadratic bound.
//! The curvature matrix is constant, so `X^T X` is factorized once.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quantile::gram_lmax;
use super::{tallied, with_tally, MultinomialData, RegressionData};
use crate::decompose::{bohning_e, build_cache_with_fallback, FactorCache};
use crate::error::{MmError, Result};
use crate::mmengine::{run_mm, FitResult, MMOptions, MmProblem};

/// Coefficient norm beyond which a fit is declared divergent.
const DIVERGENCE_NORM: f64 = 1e6;

/// `p x (c - 1)` coefficients; category `c` is the reference with logit 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultinomialModel {
    pub b: DMatrix<f64>,
    pub c: usize,
}

impl MultinomialModel {
    pub fn new(b: DMatrix<f64>, c: usize) -> Result<Self> {
        if c < 2 || b.ncols() != c - 1 {
            return Err(MmError::domain(format!(
                "coefficient matrix has {} columns, expected {}",
                b.ncols(),
                c.saturating_sub(1)
            )));
        }
        Ok(Self { b, c })
    }

    pub fn zeros(p: usize, c: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(p, c.saturating_sub(1)), c)
    }

    pub(crate) fn from_vec(v: &DVector<f64>, p: usize, c: usize) -> Self {
        Self { b: DMatrix::from_column_slice(p, c - 1, v.as_slice()), c }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultinomialFit {
    /// `fit.beta` is `vec(B)` in column-major order.
    pub fit: FitResult,
    pub model: MultinomialModel,
}

fn log1p_exp(r: f64) -> f64 {
    if r > 0.0 {
        r + (-r).exp().ln_1p()
    } else {
        r.exp().ln_1p()
    }
}

fn sigmoid(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

/// `P(y = 1 | x)` for each row.
pub fn logistic_probs(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    (x * beta).map(sigmoid)
}

/// Bernoulli loglikelihood `sum y r - log(1 + e^r)`.
pub fn bernoulli_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (x * beta).iter().zip(y.iter()).map(|(&r, &yi)| yi * r - log1p_exp(r)).sum()
}

/// `n x c` category probabilities, reference category last.
pub fn multinomial_probs(model: &MultinomialModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.b.nrows() {
        return Err(MmError::domain(format!("design has {} columns, model has {} rows", x.ncols(), model.b.nrows())));
    }
    let r = x * &model.b;
    let c = model.c;
    let mut out = DMatrix::zeros(x.nrows(), c);
    for i in 0..x.nrows() {
        let m = r.row(i).iter().fold(0.0f64, |a, &v| a.max(v));
        let base = (-m).exp();
        let mut total = base;
        for j in 0..c - 1 {
            let e = (r[(i, j)] - m).exp();
            out[(i, j)] = e;
            total += e;
        }
        out[(i, c - 1)] = base;
        out.row_mut(i).unscale_mut(total);
    }
    Ok(out)
}

/// Multinomial loglikelihood `sum_i r_{i y_i} - log(1 + sum_j e^{r_ij})`.
pub fn multinomial_loglik(model: &MultinomialModel, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if x.ncols() != model.b.nrows() || x.nrows() != labels.len() {
        return Err(MmError::domain("dimension mismatch in loglikelihood"));
    }
    let r = x * &model.b;
    let c = model.c;
    Ok((0..x.nrows())
        .map(|i| {
            let m = r.row(i).iter().fold(0.0f64, |a, &v| a.max(v));
            let lse = m + ((-m).exp() + r.row(i).iter().map(|&v| (v - m).exp()).sum::<f64>()).ln();
            let own = if labels[i] + 1 < c { r[(i, labels[i])] } else { 0.0 };
            own - lse
        })
        .sum())
}

fn check_divergence(v: &DVector<f64>) -> Result<()> {
    let norm = v.norm();
    if !(norm <= DIVERGENCE_NORM) {
        return Err(MmError::Divergence(format!(
            "coefficient norm {norm:e} exceeds {DIVERGENCE_NORM:e}; the classes are likely separable"
        )));
    }
    Ok(())
}

struct LogisticProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    cache: &'a FactorCache,
    lmax: f64,
}

impl MmProblem for LogisticProblem<'_> {
    fn objective(&mut self, beta: &DVector<f64>) -> f64 {
        -bernoulli_loglik(self.x, self.y, beta) / self.y.len() as f64
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        check_divergence(anchor)?;
        let resid = self.y - logistic_probs(self.x, anchor);
        let step = self.cache.solve_normal(&self.x.tr_mul(&resid))?;
        Ok(anchor + step * 4.0)
    }

    fn gradient(&mut self, beta: &DVector<f64>) -> Option<DVector<f64>> {
        let resid = self.y - logistic_probs(self.x, beta);
        Some(-self.x.tr_mul(&resid) / self.y.len() as f64)
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lmax / (4.0 * self.y.len() as f64))
    }

    /// Quadratic bound with curvature `(X^T X + ridge I) / 4n`.
    fn surrogate_value(&mut self, beta: &DVector<f64>, anchor: &DVector<f64>) -> Option<f64> {
        let n = self.y.len() as f64;
        let d = beta - anchor;
        let g = self.gradient(anchor)?;
        let curv = (self.cache.gram() * &d).dot(&d) + self.cache.ridge() * d.norm_squared();
        Some(self.objective(anchor) + g.dot(&d) + curv / (8.0 * n))
    }
}

/// Logistic regression from `beta = 0`.
pub fn fit_logistic(data: &RegressionData, opts: &MMOptions) -> Result<FitResult> {
    data.check_binary()?;
    let (fit, tally) = tallied(|| {
        let cache = build_cache_with_fallback(&data.x, false)?;
        fit_logistic_with(data, &cache, None, opts)
    })?;
    Ok(with_tally(fit, tally))
}

pub fn fit_logistic_with(
    data: &RegressionData,
    cache: &FactorCache,
    init: Option<DVector<f64>>,
    opts: &MMOptions,
) -> Result<FitResult> {
    data.check_binary()?;
    let mut problem = LogisticProblem { x: &data.x, y: &data.y, cache, lmax: gram_lmax(cache) };
    let init = init.unwrap_or_else(|| DVector::zeros(data.p()));
    let fit = run_mm(&mut problem, init, opts)?;
    check_divergence(&fit.beta)?;
    let margins = &data.x * &fit.beta;
    if margins.iter().zip(data.y.iter()).all(|(&m, &y)| (2.0 * y - 1.0) * m > 0.0) {
        return Err(MmError::Divergence(
            "fitted coefficients separate the classes perfectly; the maximum likelihood estimate does not exist".into(),
        ));
    }
    Ok(fit)
}

pub(crate) struct MultinomialProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub labels: &'a [usize],
    pub y: DMatrix<f64>,
    pub c: usize,
    pub cache: &'a FactorCache,
    pub e: DMatrix<f64>,
    pub e_inv: DMatrix<f64>,
    pub lmax: f64,
}

impl<'a> MultinomialProblem<'a> {
    pub fn new(data: &'a MultinomialData, cache: &'a FactorCache) -> Result<Self> {
        let (e, e_inv) = bohning_e(data.c)?;
        Ok(Self {
            x: &data.x,
            labels: &data.labels,
            y: data.indicators(),
            c: data.c,
            cache,
            e,
            e_inv,
            lmax: gram_lmax(cache),
        })
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `X^T (Y - W)` at `B`.
    pub fn score(&self, b: &MultinomialModel) -> DMatrix<f64> {
        let w = multinomial_probs(b, self.x).expect("dimensions checked");
        let resid = &self.y - w.columns(0, self.c - 1);
        self.x.tr_mul(&resid)
    }

    pub fn neg_mean_loglik(&self, b: &MultinomialModel) -> f64 {
        -multinomial_loglik(b, self.x, self.labels).expect("dimensions checked") / self.x.nrows() as f64
    }
}

impl MmProblem for MultinomialProblem<'_> {
    fn objective(&mut self, v: &DVector<f64>) -> f64 {
        self.neg_mean_loglik(&MultinomialModel::from_vec(v, self.p(), self.c))
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        check_divergence(anchor)?;
        let b = MultinomialModel::from_vec(anchor, self.p(), self.c);
        let step = self.cache.solve_normal_matrix(&self.score(&b))? * &self.e_inv;
        Ok(anchor + DVector::from_column_slice(step.as_slice()))
    }

    fn gradient(&mut self, v: &DVector<f64>) -> Option<DVector<f64>> {
        let g = self.score(&MultinomialModel::from_vec(v, self.p(), self.c));
        Some(-DVector::from_column_slice(g.as_slice()) / self.x.nrows() as f64)
    }

    fn lipschitz(&self) -> Option<f64> {
        // Largest eigenvalue of E is 1/2.
        Some(self.lmax / (2.0 * self.x.nrows() as f64))
    }

    fn surrogate_value(&mut self, v: &DVector<f64>, anchor: &DVector<f64>) -> Option<f64> {
        let (p, k) = (self.p(), self.c - 1);
        let d = DMatrix::from_column_slice(p, k, (v - anchor).as_slice());
        let g = self.gradient(anchor)?;
        let gd: f64 = g.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
        let quad =
            bohning_quadratic(self.cache.gram(), &self.e, &d) + 0.5 * self.cache.ridge() * (&d * &self.e).dot(&d);
        Some(self.objective(anchor) + gd + quad / self.x.nrows() as f64)
    }
}

/// `tr(D^T G D E) / 2`, the Bohning curvature term for a step `D`.
pub(crate) fn bohning_quadratic(gram: &DMatrix<f64>, e: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    0.5 * (gram * d * e).dot(d)
}

pub(crate) fn check_multinomial_separation(model: &MultinomialModel, data: &MultinomialData) -> Result<()> {
    let r = &data.x * &model.b;
    let c = model.c;
    let separated = data.labels.iter().enumerate().all(|(i, &l)| {
        let own = if l + 1 < c { r[(i, l)] } else { 0.0 };
        let others_max = (0..c)
            .filter(|&j| j != l)
            .map(|j| if j + 1 < c { r[(i, j)] } else { 0.0 })
            .fold(f64::NEG_INFINITY, f64::max);
        own > others_max
    });
    if separated {
        return Err(MmError::Divergence(
            "fitted coefficients separate the categories perfectly; the maximum likelihood estimate does not exist"
                .into(),
        ));
    }
    Ok(())
}

/// Multinomial regression from `B = 0`.
pub fn fit_multinomial(data: &MultinomialData, opts: &MMOptions) -> Result<MultinomialFit> {
    let (out, tally) = tallied(|| {
        let cache = build_cache_with_fallback(&data.x, false)?;
        fit_multinomial_with(data, &cache, None, opts)
    })?;
    Ok(MultinomialFit { fit: with_tally(out.fit, tally), model: out.model })
}

pub fn fit_multinomial_with(
    data: &MultinomialData,
    cache: &FactorCache,
    init: Option<DMatrix<f64>>,
    opts: &MMOptions,
) -> Result<MultinomialFit> {
    let mut problem = MultinomialProblem::new(data, cache)?;
    let (p, c) = (data.p(), data.c);
    let init = match init {
        Some(b) if b.nrows() == p && b.ncols() == c - 1 => DVector::from_column_slice(b.as_slice()),
        Some(_) => return Err(MmError::domain("initial coefficient matrix has the wrong shape")),
        None => DVector::zeros(p * (c - 1)),
    };
    let fit = run_mm(&mut problem, init, opts)?;
    check_divergence(&fit.beta)?;
    let model = MultinomialModel::from_vec(&fit.beta, p, c);
    check_multinomial_separation(&model, data)?;
    Ok(MultinomialFit { fit, model })
}

#[cfg(test)]
mod tests {
    use super::super::testing::{design, labels, normal, probes, rng};
    use super::*;
    use crate::mmengine::surrogate_gaps;

    #[test]
    fn logistic_surrogate_majorizes() {
        let mut g = rng(1);
        let x = design(&mut g, 60, 4);
        let y = normal(&mut g, 60, 1.0).map(|v| f64::from(u8::from(v > 0.0)));
        let cache = build_cache_with_fallback(&x, false).unwrap();
        let mut pr = LogisticProblem { x: &x, y: &y, cache: &cache, lmax: gram_lmax(&cache) };
        for _ in 0..100 {
            let a = normal(&mut g, 4, 1.0);
            let gaps = surrogate_gaps(&mut pr, &a, &probes(&mut g, &a, 100, 1.0)).unwrap();
            assert!(gaps.touch <= 1e-10 && gaps.excess <= 1e-10, "{gaps:?}");
        }
    }

    #[test]
    fn multinomial_surrogate_majorizes() {
        let mut g = rng(2);
        let x = design(&mut g, 80, 3);
        let data = MultinomialData::new(x, labels(&mut g, 80, 4), 4, true).unwrap();
        let cache = build_cache_with_fallback(&data.x, false).unwrap();
        let mut pr = MultinomialProblem::new(&data, &cache).unwrap();
        for _ in 0..100 {
            let a = normal(&mut g, 9, 1.0);
            let gaps = surrogate_gaps(&mut pr, &a, &probes(&mut g, &a, 100, 1.0)).unwrap();
            assert!(gaps.touch <= 1e-10 && gaps.excess <= 1e-10, "{gaps:?}");
        }
    }

    #[test]
    fn first_logistic_step() {
        let data = RegressionData::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0)).unwrap();
        let cache = build_cache_with_fallback(&data.x, false).unwrap();
        let mut pr = LogisticProblem { x: &data.x, y: &data.y, cache: &cache, lmax: 1.0 };
        let b1 = pr.surrogate_argmin(&DVector::zeros(1)).unwrap();
        assert_eq!(b1[0], 2.0);
    }

    #[test]
    fn balanced_intercept_is_zero() {
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let data = RegressionData::new(DMatrix::from_element(4, 1, 1.0), y).unwrap();
        let fit = fit_logistic(&data, &MMOptions::default()).unwrap();
        assert_eq!(fit.beta[0], 0.0);
        assert_eq!(fit.factorizations.total(), 1);
    }

    #[test]
    fn separable_logistic_is_divergence() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, -2.0, 1.0, -1.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let data = RegressionData::new(x, y).unwrap();
        assert!(matches!(fit_logistic(&data, &MMOptions::default()), Err(MmError::Divergence(_))));
    }

    #[test]
    fn probs_examples() {
        let zero = MultinomialModel::zeros(2, 4).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 1.0, -2.0]);
        let p = multinomial_probs(&zero, &x).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let m = MultinomialModel::new(DMatrix::from_row_slice(1, 2, &[2f64.ln(), 0.0]), 3).unwrap();
        let p = multinomial_probs(&m, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p[(0, 1)] - 0.25).abs() < 1e-15);
        assert!((p[(0, 2)] - 0.25).abs() < 1e-15);

        let huge = MultinomialModel::new(DMatrix::from_row_slice(1, 2, &[1000.0, 0.0]), 3).unwrap();
        let p = multinomial_probs(&huge, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(p[(0, 0)], 1.0);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn loglik_matches_probs() {
        let m = MultinomialModel::new(DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 1.1, 0.4]), 3).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -1.0, 1.0, 2.0]);
        let labels = [0, 2, 1];
        let p = multinomial_probs(&m, &x).unwrap();
        let direct: f64 = labels.iter().enumerate().map(|(i, &l)| p[(i, l)].ln()).sum();
        assert!((multinomial_loglik(&m, &x, &labels).unwrap() - direct).abs() < 1e-13);
    }
}
