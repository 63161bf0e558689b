//! Multinomial regression with a Moreau-smoothed nuclear norm penalty on the
//! non-intercept rows of `B`.
//!
//! Each MM step solves `X^T X Delta E + lambda_eff Delta = C` with
//! `lambda_eff = n lambda / mu`, reusing one eigendecomposition of `X^T X`
//! and one of `E^{-1}` across every `lambda`.

use nalgebra::{DMatrix, DVector};

use super::glm::{bohning_quadratic, check_multinomial_separation, multinomial_loglik, MultinomialModel};
use super::{tallied, with_tally, MultinomialData, MultinomialFit};
use crate::decompose::{bohning_e, sylvester_solve, SylvesterFactors};
use crate::error::{MmError, Result};
use crate::mmengine::{run_mm, MMOptions, MmProblem};
use crate::prox::prox_nuclear;

/// Shared spectral factors for a whole `lambda` path.
#[derive(Debug, Clone)]
pub struct LowRankSolver {
    factors: SylvesterFactors,
    e: DMatrix<f64>,
    e_inv: DMatrix<f64>,
}

impl LowRankSolver {
    /// Two eigendecompositions: `X^T X` and `E^{-1}`.
    pub fn new(x: &DMatrix<f64>, c: usize) -> Result<Self> {
        let (e, e_inv) = bohning_e(c)?;
        let factors = SylvesterFactors::new(&x.tr_mul(x), &e_inv)?;
        Ok(Self { factors, e, e_inv })
    }

    pub fn factors(&self) -> &SylvesterFactors {
        &self.factors
    }

    pub fn bohning(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.e, &self.e_inv)
    }
}

/// Prox of `mu |.|_*` applied below the first `skip` rows, which are copied.
fn prox_rows(b: &DMatrix<f64>, mu: f64, skip: usize) -> Result<(DMatrix<f64>, f64)> {
    let tail = b.rows(skip, b.nrows() - skip).into_owned();
    if tail.nrows() == 0 {
        return Ok((b.clone(), 0.0));
    }
    let r = prox_nuclear(&tail, mu)?;
    let mut out = b.clone();
    out.rows_mut(skip, tail.nrows()).copy_from(&r.point);
    Ok((out, r.envelope_value))
}

/// `-(1/n) L(B) + lambda M_{mu |.|_*}(B)` with the intercept row unpenalized.
pub fn lowrank_objective(data: &MultinomialData, model: &MultinomialModel, lambda: f64, mu: f64) -> Result<f64> {
    let nll = -multinomial_loglik(model, &data.x, &data.labels)? / data.n() as f64;
    if lambda == 0.0 {
        return Ok(nll);
    }
    let (_, env) = prox_rows(&model.b, mu, usize::from(data.intercept))?;
    Ok(nll + lambda * env)
}

struct LowRankProblem<'a> {
    data: &'a MultinomialData,
    y: DMatrix<f64>,
    solver: &'a LowRankSolver,
    lambda: f64,
    mu: f64,
    skip: usize,
}

impl LowRankProblem<'_> {
    fn model(&self, v: &DVector<f64>) -> MultinomialModel {
        MultinomialModel::from_vec(v, self.data.p(), self.data.c)
    }
}

impl MmProblem for LowRankProblem<'_> {
    fn objective(&mut self, v: &DVector<f64>) -> f64 {
        if v.iter().any(|x| !x.is_finite()) {
            return f64::NAN;
        }
        lowrank_objective(self.data, &self.model(v), self.lambda, self.mu).unwrap_or(f64::NAN)
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        let b = self.model(anchor);
        let w = super::multinomial_probs(&b, &self.data.x)?;
        let c = self.data.c;
        let mut rhs = self.data.x.tr_mul(&(&self.y - w.columns(0, c - 1)));
        let lambda_eff = self.data.n() as f64 * self.lambda / self.mu;
        if self.lambda > 0.0 {
            let (p, _) = prox_rows(&b.b, self.mu, self.skip)?;
            rhs += (p - &b.b) * lambda_eff;
        }
        let delta = sylvester_solve(&self.solver.factors, lambda_eff, &rhs)?;
        Ok(anchor + DVector::from_column_slice(delta.as_slice()))
    }

    /// Bohning bound on the loglikelihood plus
    /// `lambda (|P_m|_* + |B - P_m|^2 / 2mu)`, with `P_m` the prox at the anchor.
    fn surrogate_value(&mut self, v: &DVector<f64>, anchor: &DVector<f64>) -> Option<f64> {
        let bm = self.model(anchor);
        let b = self.model(v);
        let n = self.data.n() as f64;
        let c = self.data.c;
        let w = super::multinomial_probs(&bm, &self.data.x).ok()?;
        let score = self.data.x.tr_mul(&(&self.y - w.columns(0, c - 1)));
        let d = &b.b - &bm.b;
        let gram = self.data.x.tr_mul(&self.data.x);
        let nll = -multinomial_loglik(&bm, &self.data.x, &self.data.labels).ok()? / n;
        let loss = nll - score.dot(&d) / n + bohning_quadratic(&gram, &self.solver.e, &d) / n;
        if self.lambda == 0.0 {
            return Some(loss);
        }
        let (p, _) = prox_rows(&bm.b, self.mu, self.skip).ok()?;
        let tail = p.rows(self.skip, p.nrows() - self.skip).into_owned();
        let nuclear: f64 = if tail.nrows() == 0 { 0.0 } else { tail.svd(false, false).singular_values.sum() };
        Some(loss + self.lambda * (nuclear + (&b.b - &p).norm_squared() / (2.0 * self.mu)))
    }
}

/// Low-rank multinomial regression at one `lambda`, from `B = 0`.
pub fn fit_lowrank_multinomial(
    data: &MultinomialData,
    lambda: f64,
    mu: f64,
    opts: &MMOptions,
) -> Result<MultinomialFit> {
    let (mut path, tally) = tallied(|| fit_lowrank_path(data, &[lambda], mu, opts))?;
    let mut out = path.pop().expect("one lambda");
    out.fit = with_tally(out.fit, tally);
    Ok(out)
}

/// Fits every `lambda` in order with warm starts, sharing one
/// [`LowRankSolver`].
pub fn fit_lowrank_path(
    data: &MultinomialData,
    lambdas: &[f64],
    mu: f64,
    opts: &MMOptions,
) -> Result<Vec<MultinomialFit>> {
    let solver = LowRankSolver::new(&data.x, data.c)?;
    let mut warm = None;
    let mut fits = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let (fit, tally) = tallied(|| fit_lowrank_with(data, &solver, lambda, mu, warm.clone(), opts))?;
        warm = Some(fit.model.b.clone());
        fits.push(MultinomialFit { fit: with_tally(fit.fit, tally), model: fit.model });
    }
    Ok(fits)
}

pub fn fit_lowrank_with(
    data: &MultinomialData,
    solver: &LowRankSolver,
    lambda: f64,
    mu: f64,
    init: Option<DMatrix<f64>>,
    opts: &MMOptions,
) -> Result<MultinomialFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(MmError::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(MmError::domain(format!("mu must be positive, got {mu}")));
    }
    if solver.factors.rows() != data.p() || solver.factors.cols() != data.c - 1 {
        return Err(MmError::domain("solver was built for a different design or category count"));
    }
    let (p, c) = (data.p(), data.c);
    let init = match init {
        Some(b) if b.nrows() == p && b.ncols() == c - 1 => DVector::from_column_slice(b.as_slice()),
        Some(_) => return Err(MmError::domain("initial coefficient matrix has the wrong shape")),
        None => DVector::zeros(p * (c - 1)),
    };
    let mut problem =
        LowRankProblem { data, y: data.indicators(), solver, lambda, mu, skip: usize::from(data.intercept) };
    let fit = run_mm(&mut problem, init, opts)?;
    let model = MultinomialModel::from_vec(&fit.beta, p, c);
    if lambda == 0.0 {
        check_multinomial_separation(&model, data)?;
    }
    Ok(MultinomialFit { fit, model })
}
