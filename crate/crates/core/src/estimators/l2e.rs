//! L2E regression with a joint precision parameter.
//!
//! The criterion is
//! `f(beta, tau) = tau / (2 sqrt(pi)) - (tau / n) sqrt(2/pi) sum exp(-tau^2 r_i^2 / 2)`.
//! Each block step does one deweighted least squares update of `beta` and
//! one backtracking gradient step on `tau`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{tallied, with_tally, RegressionData};
use crate::decompose::{build_cache_with_fallback, FactorCache};
use crate::error::{MmError, Result};
use crate::mmengine::{deweight, run_mm, FitResult, MMOptions, MmProblem};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct L2EState {
    pub beta: DVector<f64>,
    pub tau: f64,
    /// `exp(-tau^2 r_i^2 / 2)`.
    pub weights: DVector<f64>,
}

impl L2EState {
    pub fn at(x: &DMatrix<f64>, y: &DVector<f64>, beta: DVector<f64>, tau: f64) -> Self {
        let weights = l2e_weights(&(y - x * &beta), tau);
        Self { beta, tau, weights }
    }

    /// `-log w_i`, larger for more outlying observations.
    pub fn outlyingness(&self) -> DVector<f64> {
        self.weights.map(|w| -w.ln())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct L2EFit {
    /// `fit.beta` holds the coefficients followed by `tau`.
    pub fit: FitResult,
    pub state: L2EState,
}

pub(crate) fn l2e_weights(r: &DVector<f64>, tau: f64) -> DVector<f64> {
    r.map(|ri| (-0.5 * tau * tau * ri * ri).exp())
}

/// L2E criterion for residuals `r` at precision `tau`.
pub fn l2e_objective(r: &DVector<f64>, tau: f64) -> f64 {
    let n = r.len() as f64;
    let s: f64 = r.iter().map(|&ri| (-0.5 * tau * tau * ri * ri).exp()).sum();
    tau / (2.0 * PI.sqrt()) - tau / n * (2.0 / PI).sqrt() * s
}

/// Derivative of [`l2e_objective`] in `tau`.
pub(crate) fn l2e_dtau(r: &DVector<f64>, tau: f64) -> f64 {
    let n = r.len() as f64;
    let s: f64 = r
        .iter()
        .map(|&ri| {
            let t = tau * tau * ri * ri;
            (-0.5 * t).exp() * (1.0 - t)
        })
        .sum();
    1.0 / (2.0 * PI.sqrt()) - (2.0 / PI).sqrt() / n * s
}

/// One Armijo backtracking step on `tau` for a fixed objective slice.
///
/// `step` carries the last accepted step length between calls; each call
/// first tries twice that length. Returns `None` when no step satisfies the
/// sufficient decrease test within the halving budget.
pub(crate) fn tau_step(f: impl Fn(f64) -> f64, df: f64, tau: f64, step: &mut f64, tau_max: f64) -> Option<f64> {
    if df == 0.0 {
        return Some(tau);
    }
    let f0 = f(tau);
    let mut t = *step * 2.0;
    for _ in 0..MAX_HALVINGS {
        let cand = (tau - t * df).min(tau_max);
        if cand > 0.0 {
            let moved = tau - cand;
            let fc = f(cand);
            if fc.is_finite() && fc <= f0 - ARMIJO * moved * df {
                *step = t;
                return Some(cand);
            }
        }
        t *= 0.5;
    }
    None
}

struct L2EProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    cache: &'a FactorCache,
    step: f64,
    stalls: usize,
}

impl L2EProblem<'_> {
    fn split(theta: &DVector<f64>) -> (DVector<f64>, f64) {
        let p = theta.len() - 1;
        (theta.rows(0, p).into_owned(), theta[p])
    }
}

impl MmProblem for L2EProblem<'_> {
    fn objective(&mut self, theta: &DVector<f64>) -> f64 {
        let (beta, tau) = Self::split(theta);
        if !(tau > 0.0) {
            return f64::NAN;
        }
        l2e_objective(&(self.y - self.x * beta), tau)
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        let (beta_m, tau_a) = Self::split(anchor);
        let tau = if tau_a > 0.0 { tau_a } else { f64::MIN_POSITIVE.sqrt() };
        let fitted = self.x * &beta_m;
        let w = l2e_weights(&(self.y - &fitted), tau);
        let yt = deweight(self.y, &fitted, &w)?;
        let beta = self.cache.solve_normal(&self.x.tr_mul(&yt))?;
        let r = self.y - self.x * &beta;
        let df = l2e_dtau(&r, tau);
        let tau_new = match tau_step(|t| l2e_objective(&r, t), df, tau, &mut self.step, f64::INFINITY) {
            Some(t) => t,
            None => {
                self.stalls += 1;
                tau
            }
        };
        let mut theta = beta.insert_row(beta_m.len(), 0.0);
        theta[beta_m.len()] = tau_new;
        Ok(theta)
    }
}

/// L2E regression starting from OLS with `tau = 1`.
pub fn fit_l2e(data: &RegressionData, opts: &MMOptions) -> Result<L2EFit> {
    let (out, tally) = tallied(|| {
        let cache = build_cache_with_fallback(&data.x, false)?;
        let beta0 = cache.solve_normal(&data.x.tr_mul(&data.y))?;
        fit_l2e_from(data, &cache, beta0, 1.0, opts)
    })?;
    Ok(L2EFit { fit: with_tally(out.fit, tally), state: out.state })
}

pub(crate) fn fit_l2e_from(
    data: &RegressionData,
    cache: &FactorCache,
    beta0: DVector<f64>,
    tau0: f64,
    opts: &MMOptions,
) -> Result<L2EFit> {
    if !(tau0 > 0.0 && tau0.is_finite()) {
        return Err(MmError::domain(format!("initial precision must be positive, got {tau0}")));
    }
    let p = beta0.len();
    let mut theta0 = beta0.insert_row(p, 0.0);
    theta0[p] = tau0;
    let mut problem = L2EProblem { x: &data.x, y: &data.y, cache, step: 0.5, stalls: 0 };
    let mut fit = run_mm(&mut problem, theta0, opts)?;
    if problem.stalls > 0 {
        fit.warnings.push(format!("precision line search stalled {} times; tau kept", problem.stalls));
    }
    let (beta, tau) = L2EProblem::split(&fit.beta);
    let state = L2EState::at(&data.x, &data.y, beta, tau);
    Ok(L2EFit { fit, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_residual_weight_is_one() {
        let w = l2e_weights(&DVector::from_vec(vec![0.0, 1.0]), 1.0);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn dtau_matches_finite_difference() {
        let r = DVector::from_vec(vec![0.3, -1.2, 2.5, 0.0]);
        for tau in [0.3, 1.0, 2.7] {
            let h = 1e-6;
            let fd = (l2e_objective(&r, tau + h) - l2e_objective(&r, tau - h)) / (2.0 * h);
            assert!((fd - l2e_dtau(&r, tau)).abs() < 1e-8);
        }
    }

    #[test]
    fn tau_step_descends() {
        let r = DVector::from_vec(vec![0.5, -0.4, 0.2, 1.0, -0.9]);
        let mut step = 0.5;
        let mut tau = 0.2;
        let df0 = l2e_dtau(&r, tau).abs();
        for _ in 0..500 {
            let next = tau_step(|t| l2e_objective(&r, t), l2e_dtau(&r, tau), tau, &mut step, f64::INFINITY).unwrap();
            assert!(l2e_objective(&r, next) <= l2e_objective(&r, tau));
            tau = next;
        }
        assert!(l2e_dtau(&r, tau).abs() < 1e-3 * df0);
    }

    #[test]
    fn weights_identity_on_return() {
        let x = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 10.0 });
        let y = DVector::from_fn(40, |i, _| 2.0 + 0.5 * i as f64 / 10.0 + ((i * 37 % 11) as f64 - 5.0) / 20.0);
        let data = RegressionData::new(x, y).unwrap();
        let fit = fit_l2e(&data, &MMOptions::default()).unwrap();
        let r = &data.y - &data.x * &fit.state.beta;
        let w = l2e_weights(&r, fit.state.tau);
        assert!((w - &fit.state.weights).amax() < 1e-12);
        assert_eq!(fit.fit.factorizations.total(), 1);
        assert_eq!(fit.fit.count_descent_violations(), 0);
    }
}
