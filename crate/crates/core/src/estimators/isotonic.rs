//! Robust isotonic regression: L2E loss with one mean per observation and
//! an annealed distance penalty pulling adjacent differences into the
//! nonnegative orthant.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::l2e::{l2e_dtau, l2e_objective, l2e_weights, tau_step};
use super::{tallied, with_tally, AnnealSchedule};
use crate::decompose::FactorCache;
use crate::error::{MmError, Result};
use crate::mmengine::{deweight, run_mm, FitResult, MMOptions, MmProblem};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IsotonicConfig {
    pub sched: AnnealSchedule,
    /// Hold every weight at 1 and `tau` at its start, giving penalized
    /// least squares.
    pub pin_weights: bool,
    /// Upper limit for `tau`. The criterion is unbounded below in `tau`
    /// whenever enough observations can be interpolated exactly, so a cap
    /// is always applied; `None` means ten times the starting value.
    pub tau_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsotonicFit {
    /// `fit.beta` holds the fitted means followed by `tau`.
    pub fit: FitResult,
    pub beta: DVector<f64>,
    pub tau: f64,
    pub weights: DVector<f64>,
    /// `tau^2 r_i^2 / 2`, i.e. `-log w_i` without underflow.
    pub outlyingness: DVector<f64>,
    /// Largest adjacent decrease `max(0, beta_i - beta_{i+1})`.
    pub max_violation: f64,
    pub lambda_final: f64,
}

/// Pooled adjacent violators: least squares nondecreasing fit.
pub fn pava(y: &DVector<f64>) -> DVector<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().expect("two blocks") = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    DVector::from_iterator(y.len(), blocks.into_iter().flat_map(|(m, c)| std::iter::repeat_n(m, c)))
}

fn diffs(beta: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(beta.len() - 1, beta.as_slice().windows(2).map(|w| w[1] - w[0]))
}

/// `D^T v` for the adjacent difference operator.
fn diffs_adjoint(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() + 1;
    DVector::from_fn(n, |i, _| {
        let up = if i >= 1 { v[i - 1] } else { 0.0 };
        let down = if i < n - 1 { v[i] } else { 0.0 };
        up - down
    })
}

fn dtd(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if i == 0 || i == n - 1 {
                1.0
            } else {
                2.0
            }
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

fn half_dist_sq(beta: &DVector<f64>) -> f64 {
    0.5 * diffs(beta).iter().map(|d| d.min(0.0).powi(2)).sum::<f64>()
}

/// Penalized criterion at stage constant `lambda`: the L2E loss (or half
/// the squared residual norm when weights are pinned) plus
/// `lambda * dist(D beta, R_+)^2 / 2`.
pub fn isotonic_objective(y: &DVector<f64>, beta: &DVector<f64>, tau: f64, lambda: f64, pinned: bool) -> f64 {
    let pen = lambda * half_dist_sq(beta);
    if pinned {
        0.5 * (y - beta).norm_squared() + pen
    } else if tau > 0.0 {
        l2e_objective(&(y - beta), tau) + pen
    } else {
        f64::NAN
    }
}

fn max_violation(beta: &DVector<f64>) -> f64 {
    diffs(beta).iter().fold(0.0, |a, d| a.max(-d))
}

struct IsotonicProblem<'a> {
    y: &'a DVector<f64>,
    cache: &'a FactorCache,
    lambda: f64,
    pinned: Option<f64>,
    tau_max: f64,
    step: f64,
    stalls: usize,
}

impl IsotonicProblem<'_> {
    fn split(theta: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = theta.len() - 1;
        (theta.rows(0, n).into_owned(), theta[n])
    }

    fn join(beta: DVector<f64>, tau: f64) -> DVector<f64> {
        let n = beta.len();
        let mut t = beta.insert_row(n, 0.0);
        t[n] = tau;
        t
    }

    /// Solves `(s I + lambda D^T D) beta = s yt + lambda D^T P(D beta_m)`.
    fn solve(&self, s: f64, yt: &DVector<f64>, beta_m: &DVector<f64>) -> Result<DVector<f64>> {
        if self.lambda == 0.0 {
            return Ok(yt.clone());
        }
        let proj = diffs(beta_m).map(|d| d.max(0.0));
        let rhs = yt * s + diffs_adjoint(&proj) * self.lambda;
        self.cache.solve_ridge_spectral(self.lambda, s, &rhs)
    }
}

impl MmProblem for IsotonicProblem<'_> {
    fn objective(&mut self, theta: &DVector<f64>) -> f64 {
        let (beta, tau) = Self::split(theta);
        isotonic_objective(self.y, &beta, tau, self.lambda, self.pinned.is_some())
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>> {
        let (beta_m, tau_a) = Self::split(anchor);
        if let Some(tau0) = self.pinned {
            let beta = self.solve(1.0, self.y, &beta_m)?;
            return Ok(Self::join(beta, tau0));
        }
        let tau = tau_a.clamp(f64::MIN_POSITIVE.sqrt(), self.tau_max);
        let n = self.y.len() as f64;
        let w = l2e_weights(&(self.y - &beta_m), tau);
        let yt = deweight(self.y, &beta_m, &w)?;
        let s = tau.powi(3) / n * (2.0 / PI).sqrt();
        let beta = self.solve(s, &yt, &beta_m)?;
        let r = self.y - &beta;
        let df = l2e_dtau(&r, tau);
        let tau_new = match tau_step(|t| l2e_objective(&r, t), df, tau, &mut self.step, self.tau_max) {
            Some(t) => t,
            None => {
                self.stalls += 1;
                tau
            }
        };
        Ok(Self::join(beta, tau_new))
    }
}

fn mad_scale(r: &DVector<f64>) -> f64 {
    let mut a: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    a.sort_by(f64::total_cmp);
    let m = a.len();
    let med = if m % 2 == 1 { a[m / 2] } else { 0.5 * (a[m / 2 - 1] + a[m / 2]) };
    1.4826 * med
}

/// Robust isotonic L2E fit, started from the PAVA solution with `tau`
/// set from the MAD of its residuals.
pub fn fit_isotonic_l2e(y: &DVector<f64>, config: &IsotonicConfig, opts: &MMOptions) -> Result<IsotonicFit> {
    let n = y.len();
    if n < 2 {
        return Err(MmError::domain("isotonic regression needs at least two observations"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(MmError::input("response contains NaN or infinite entries"));
    }
    config.sched.validate()?;
    let range = y.max() - y.min();
    let (out, tally) = tallied(|| {
        let cache = FactorCache::from_gram(dtd(n), 0.0, false, true)?;
        let beta0 = pava(y);
        let scale = mad_scale(&(y - &beta0));
        let scale = if scale > 0.0 { scale } else { (range / n as f64).max(1e-8) };
        let tau_max = config.tau_max.unwrap_or(10.0 / scale);
        let tau0 = (1.0 / scale).min(tau_max);
        let mut theta = IsotonicProblem::join(beta0, tau0);
        let inner_opts = MMOptions { tol: config.sched.inner_tol, trace_path: None, ..opts.clone() };
        let mut total = FitResult::empty(theta.clone());
        let mut lambda_final = config.sched.lambda_init;
        let mut stalls = 0;
        for lambda in config.sched.lambdas() {
            let mut problem = IsotonicProblem {
                y,
                cache: &cache,
                lambda,
                pinned: config.pin_weights.then_some(tau0),
                tau_max,
                step: 0.5,
                stalls: 0,
            };
            let stage = run_mm(&mut problem, theta, &inner_opts)?;
            stalls += problem.stalls;
            theta = stage.beta.clone();
            total.absorb_stage(stage);
            lambda_final = lambda;
            let (beta, _) = IsotonicProblem::split(&theta);
            if max_violation(&beta) <= 1e-6 * range.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        if stalls > 0 {
            total.warnings.push(format!("precision line search stalled {stalls} times; tau kept"));
        }
        Ok((total, lambda_final))
    })?;
    let (total, lambda_final) = out;
    let fit = with_tally(total, tally);
    let (beta, tau) = IsotonicProblem::split(&fit.beta);
    let r = y - &beta;
    let weights = l2e_weights(&r, tau);
    let outlyingness = r.map(|ri| 0.5 * tau * tau * ri * ri);
    let max_violation = max_violation(&beta);
    Ok(IsotonicFit { fit, beta, tau, weights, outlyingness, max_violation, lambda_final })
}
