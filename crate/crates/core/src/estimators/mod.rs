//! Model fitters built on [`crate::mmengine::run_mm`].
//!
//! Every fitter factorizes its Gram matrix (or a spectral relative of it)
//! once and reuses it on every iteration; the delta of
//! [`crate::decompose::factor_tally`] is reported in
//! [`FitResult::factorizations`](crate::mmengine::FitResult).

mod data;
mod glm;
mod isotonic;
mod l2e;
mod lowrank;
mod quantile;
mod sparse;

pub use data::{MultinomialData, RegressionData};
pub use glm::{
    bernoulli_loglik, fit_logistic, fit_logistic_with, fit_multinomial, fit_multinomial_with, logistic_probs,
    multinomial_loglik, multinomial_probs, MultinomialFit, MultinomialModel,
};
pub use isotonic::{fit_isotonic_l2e, isotonic_objective, pava, IsotonicConfig, IsotonicFit};
pub use l2e::{fit_l2e, l2e_objective, L2EFit, L2EState};
pub use lowrank::{fit_lowrank_multinomial, fit_lowrank_path, fit_lowrank_with, lowrank_objective, LowRankSolver};
pub use quantile::{
    fit_lad, fit_lad_with, fit_quantile, fit_quantile_with, lad_best_quadratic_weights, lad_objective,
    quantile_objective, smoothed_quantile_loss, LadProblem, QuantileProblem, QuantileSpec,
};
pub use sparse::{
    fit_sparse_quantile_l0, fit_sparse_quantile_l0_with, fit_sparse_quantile_pd, fit_sparse_quantile_pd_with,
    l0_penalized_objective, pd_penalized_objective, AnnealSchedule, SparseFit, SparsityPenalty,
};

use crate::decompose::{factor_tally, FactorTally};
use crate::error::Result;
use crate::mmengine::FitResult;

/// Runs `f` and stores the factorizations it performed on the result.
pub(crate) fn tallied<T, F>(f: F) -> Result<(T, FactorTally)>
where
    F: FnOnce() -> Result<T>,
{
    let before = factor_tally();
    let out = f()?;
    Ok((out, factor_tally().since(before)))
}

pub(crate) fn with_tally(mut fit: FitResult, tally: FactorTally) -> FitResult {
    fit.factorizations = tally;
    fit
}
