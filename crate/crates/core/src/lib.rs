//! Majorization-minimization regression on recycled factorizations.
//!
//! Each estimator majorizes a nonsmooth or nonconvex loss by a quadratic
//! whose Hessian does not change between iterations, so one Cholesky or
//! spectral factorization serves the whole fit. Prox maps and Moreau
//! envelopes live in [`prox`], the cached factorizations in [`decompose`],
//! the iteration driver in [`mmengine`].

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod decompose;
pub mod error;
pub mod estimators;
pub mod mmengine;
pub mod prox;
pub mod simdata;

pub use error::{MmError, Result};
