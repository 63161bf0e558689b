//! Proximal maps and Moreau envelopes.
//!
//! For a function `f` and smoothing constant `mu > 0` the proximal map is
//! `prox(x) = argmin_v f(v) + |x - v|^2 / (2 mu)` and the Moreau envelope is
//! the attained minimum. Every surrogate used by the estimators is assembled
//! from the closed forms collected here.
//!
//! Hard-threshold maps keep a coordinate (or singular value) when
//! `x^2 / 2 >= mu`, so a value sitting exactly on the boundary survives.

use nalgebra::{DMatrix, DVector};

use crate::error::{MmError, Result};

/// Proximal point together with the envelope value at the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult<T> {
    pub point: T,
    /// `f(point) + |input - point|^2 / (2 mu)`. For set projections this is
    /// reported at unit `mu`, i.e. half the squared distance.
    pub envelope_value: f64,
    /// `|input - point|^2`, the squared distance moved by the map.
    pub sq_distance: f64,
}

/// Scalar functions with closed-form proximal maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarKind {
    Abs,
    /// Check (pinball) loss at quantile level `q`.
    Check(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarProxSpec {
    kind: ScalarKind,
    mu: f64,
}

impl ScalarProxSpec {
    pub fn new(kind: ScalarKind, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        if let ScalarKind::Check(q) = kind {
            check_q(q)?;
        }
        Ok(Self { kind, mu })
    }

    pub fn abs(mu: f64) -> Result<Self> {
        Self::new(ScalarKind::Abs, mu)
    }

    pub fn check(q: f64, mu: f64) -> Result<Self> {
        Self::new(ScalarKind::Check(q), mu)
    }

    pub fn kind(&self) -> ScalarKind {
        self.kind
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// The unsmoothed function value.
    pub fn value(&self, r: f64) -> f64 {
        match self.kind {
            ScalarKind::Abs => r.abs(),
            ScalarKind::Check(q) => check_unchecked(r, q),
        }
    }

    pub fn prox(&self, r: f64) -> f64 {
        match self.kind {
            ScalarKind::Abs => soft_threshold(r, self.mu),
            ScalarKind::Check(q) => prox_check_unchecked(r, self.mu, q),
        }
    }

    pub fn envelope(&self, r: f64) -> f64 {
        match self.kind {
            ScalarKind::Abs => huber(r, self.mu),
            ScalarKind::Check(q) => moreau_check_unchecked(r, self.mu, q),
        }
    }

    /// Lipschitz constant of the unsmoothed function.
    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            ScalarKind::Abs => 1.0,
            ScalarKind::Check(q) => q.max(1.0 - q),
        }
    }
}

/// Vector penalties: the l0 "norm" and the indicator of `{b : |b|_0 <= k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VectorProxSpec {
    L0Norm { mu: f64 },
    SparsitySet { k: usize },
}

impl VectorProxSpec {
    pub fn apply(&self, beta: &DVector<f64>) -> Result<ProxResult<DVector<f64>>> {
        match *self {
            VectorProxSpec::L0Norm { mu } => prox_l0(beta, mu),
            VectorProxSpec::SparsitySet { k } => project_sparsity(beta, k),
        }
    }
}

/// Spectral penalties on matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixProxSpec {
    RankSet { k: usize },
    RankFunction { mu: f64 },
    NuclearNorm { mu: f64 },
}

impl MatrixProxSpec {
    pub fn apply(&self, b: &DMatrix<f64>) -> Result<ProxResult<DMatrix<f64>>> {
        match *self {
            MatrixProxSpec::RankSet { k } => project_rank(b, k),
            MatrixProxSpec::RankFunction { mu } => prox_rank_fn(b, mu),
            MatrixProxSpec::NuclearNorm { mu } => prox_nuclear(b, mu),
        }
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(MmError::domain(format!("smoothing constant must be positive, got {mu}")));
    }
    Ok(())
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MmError::domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    Ok(())
}

fn check_finite(r: f64) -> Result<()> {
    if !r.is_finite() {
        return Err(MmError::domain(format!("non-finite argument {r}")));
    }
    Ok(())
}

// Unchecked kernels shared with the estimators' inner loops.

#[inline]
pub(crate) fn soft_threshold(r: f64, mu: f64) -> f64 {
    (1.0 - mu / r.abs().max(mu)) * r
}

#[inline]
pub(crate) fn huber(r: f64, mu: f64) -> f64 {
    let a = r.abs();
    if a <= mu {
        r * r / (2.0 * mu)
    } else {
        a - mu / 2.0
    }
}

#[inline]
pub(crate) fn check_unchecked(r: f64, q: f64) -> f64 {
    if r >= 0.0 {
        q * r
    } else {
        (q - 1.0) * r
    }
}

#[inline]
fn prox_check_unchecked(r: f64, mu: f64, q: f64) -> f64 {
    if r >= q * mu {
        r - q * mu
    } else if r <= -(1.0 - q) * mu {
        r + (1.0 - q) * mu
    } else {
        0.0
    }
}

#[inline]
fn moreau_check_unchecked(r: f64, mu: f64, q: f64) -> f64 {
    if r >= q * mu {
        q * r - mu * q * q / 2.0
    } else if r <= -(1.0 - q) * mu {
        -(1.0 - q) * r - mu * (1.0 - q) * (1.0 - q) / 2.0
    } else {
        r * r / (2.0 * mu)
    }
}

/// Soft threshold `(1 - mu / max(|r|, mu)) r`.
pub fn prox_abs(r: f64, mu: f64) -> Result<f64> {
    check_finite(r)?;
    check_mu(mu)?;
    Ok(soft_threshold(r, mu))
}

/// Huber function, the Moreau envelope of `|.|`.
pub fn moreau_abs(r: f64, mu: f64) -> Result<f64> {
    check_finite(r)?;
    check_mu(mu)?;
    Ok(huber(r, mu))
}

pub fn check_loss(r: f64, q: f64) -> Result<f64> {
    check_finite(r)?;
    check_q(q)?;
    Ok(check_unchecked(r, q))
}

pub fn prox_check(r: f64, mu: f64, q: f64) -> Result<f64> {
    check_finite(r)?;
    check_mu(mu)?;
    check_q(q)?;
    Ok(prox_check_unchecked(r, mu, q))
}

pub fn moreau_check(r: f64, mu: f64, q: f64) -> Result<f64> {
    check_finite(r)?;
    check_mu(mu)?;
    check_q(q)?;
    Ok(moreau_check_unchecked(r, mu, q))
}

/// Convolution of `|.|` with the uniform kernel on `[-mu, mu]`.
///
/// Equal to the Huber envelope shifted up by `mu / 2`.
pub fn conv_smoothed_abs(r: f64, mu: f64) -> Result<f64> {
    check_finite(r)?;
    check_mu(mu)?;
    Ok(huber(r, mu) + mu / 2.0)
}

/// Coordinatewise hard threshold for the l0 penalty.
pub fn prox_l0(beta: &DVector<f64>, mu: f64) -> Result<ProxResult<DVector<f64>>> {
    check_mu(mu)?;
    let mut point = beta.clone();
    let mut envelope = 0.0;
    let mut sq = 0.0;
    for v in point.iter_mut() {
        check_finite(*v)?;
        if 0.5 * *v * *v >= mu {
            envelope += 1.0;
        } else {
            envelope += *v * *v / (2.0 * mu);
            sq += *v * *v;
            *v = 0.0;
        }
    }
    Ok(ProxResult { point, envelope_value: envelope, sq_distance: sq })
}

/// Euclidean projection onto the vectors with at most `k` nonzero entries.
///
/// Ties in magnitude at the cut are broken toward the lower index.
pub fn project_sparsity(beta: &DVector<f64>, k: usize) -> Result<ProxResult<DVector<f64>>> {
    let p = beta.len();
    if k > p {
        return Err(MmError::domain(format!("sparsity level {k} exceeds dimension {p}")));
    }
    for &v in beta.iter() {
        check_finite(v)?;
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()));
    let mut point = beta.clone();
    let mut sq = 0.0;
    for &j in &order[k..] {
        sq += beta[j] * beta[j];
        point[j] = 0.0;
    }
    Ok(ProxResult { point, envelope_value: 0.5 * sq, sq_distance: sq })
}

/// Thin SVD with singular values in descending order.
pub(crate) fn thin_svd(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(MmError::domain("matrix has non-finite entries"));
    }
    let svd = nalgebra::linalg::SVD::try_new(b.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| MmError::Singular("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| MmError::Singular("SVD returned no left vectors".into()))?;
    let vt = svd.v_t.ok_or_else(|| MmError::Singular("SVD returned no right vectors".into()))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &c| s[c].total_cmp(&s[a]));
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let vt_sorted = DMatrix::from_fn(order.len(), vt.ncols(), |i, j| vt[(order[i], j)]);
    let s_sorted = order.iter().map(|&j| s[j]).collect();
    Ok((u_sorted, s_sorted, vt_sorted))
}

fn rebuild(u: &DMatrix<f64>, s: &[f64], vt: &DMatrix<f64>) -> DMatrix<f64> {
    let mut us = u.clone();
    for (j, &sj) in s.iter().enumerate() {
        us.column_mut(j).scale_mut(sj);
    }
    us * vt
}

/// Eckart-Young truncation to rank `k`.
pub fn project_rank(b: &DMatrix<f64>, k: usize) -> Result<ProxResult<DMatrix<f64>>> {
    let m = b.nrows().min(b.ncols());
    if k > m {
        return Err(MmError::domain(format!("rank {k} exceeds min dimension {m}")));
    }
    let (u, mut s, vt) = thin_svd(b)?;
    let sq: f64 = s[k..].iter().map(|v| v * v).sum();
    for v in s[k..].iter_mut() {
        *v = 0.0;
    }
    Ok(ProxResult { point: rebuild(&u, &s, &vt), envelope_value: 0.5 * sq, sq_distance: sq })
}

/// Singular value soft threshold, the proximal map of `mu * |.|_*`.
pub fn prox_nuclear(b: &DMatrix<f64>, mu: f64) -> Result<ProxResult<DMatrix<f64>>> {
    check_mu(mu)?;
    let (u, mut s, vt) = thin_svd(b)?;
    let mut sq = 0.0;
    let mut nuclear = 0.0;
    for v in s.iter_mut() {
        let shrunk = (*v - mu).max(0.0);
        sq += (*v - shrunk) * (*v - shrunk);
        nuclear += shrunk;
        *v = shrunk;
    }
    Ok(ProxResult { point: rebuild(&u, &s, &vt), envelope_value: nuclear + sq / (2.0 * mu), sq_distance: sq })
}

/// Singular value hard threshold, the proximal map of `mu * rank(.)`.
pub fn prox_rank_fn(b: &DMatrix<f64>, mu: f64) -> Result<ProxResult<DMatrix<f64>>> {
    check_mu(mu)?;
    let (u, mut s, vt) = thin_svd(b)?;
    let mut envelope = 0.0;
    let mut sq = 0.0;
    for v in s.iter_mut() {
        if 0.5 * *v * *v >= mu {
            envelope += 1.0;
        } else {
            envelope += *v * *v / (2.0 * mu);
            sq += *v * *v;
            *v = 0.0;
        }
    }
    Ok(ProxResult { point: rebuild(&u, &s, &vt), envelope_value: envelope, sq_distance: sq })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abs_examples() {
        assert_eq!(prox_abs(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(prox_abs(0.5, 1.0).unwrap(), 0.0);
        assert_eq!(prox_abs(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(moreau_abs(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(moreau_abs(0.5, 1.0).unwrap(), 0.125);
        assert_eq!(moreau_abs(2.0, 1.0).unwrap(), 1.5);
    }

    #[test]
    fn check_examples() {
        assert!((prox_check(1.0, 1.0, 0.7).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(prox_check(-0.2, 1.0, 0.7).unwrap(), 0.0);
        assert_eq!(prox_check(2.0, 2.0, 0.5).unwrap(), 1.0);
        assert!((moreau_check(1.0, 1.0, 0.7).unwrap() - 0.455).abs() < 1e-15);
        assert_eq!(moreau_check(0.0, 1.0, 0.3).unwrap(), 0.0);
        assert!((moreau_check(-1.0, 1.0, 0.7).unwrap() - 0.255).abs() < 1e-15);
        assert!((check_loss(1.0, 0.7).unwrap() - 0.7).abs() < 1e-15);
        assert!((check_loss(-1.0, 0.7).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(check_loss(0.0, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn conv_examples() {
        assert_eq!(conv_smoothed_abs(0.0, 1.0).unwrap(), 0.5);
        assert_eq!(conv_smoothed_abs(2.0, 1.0).unwrap(), 2.0);
        assert_eq!(conv_smoothed_abs(0.5, 1.0).unwrap(), 0.625);
    }

    #[test]
    fn domain_errors() {
        assert!(prox_abs(f64::NAN, 1.0).is_err());
        assert!(prox_abs(1.0, 0.0).is_err());
        assert!(moreau_abs(1.0, -1.0).is_err());
        assert!(prox_check(1.0, 1.0, 1.0).is_err());
        assert!(prox_check(1.0, 1.0, 0.0).is_err());
        assert!(check_loss(1.0, 1.5).is_err());
        assert!(ScalarProxSpec::check(0.0, 1.0).is_err());
        assert!(project_sparsity(&DVector::from_vec(vec![1.0, 2.0]), 3).is_err());
        assert!(project_rank(&DMatrix::identity(2, 3), 3).is_err());
    }

    #[test]
    fn l0_examples() {
        let r = prox_l0(&DVector::from_vec(vec![1.6, 0.1]), 1.0).unwrap();
        assert_eq!(r.point.as_slice(), &[1.6, 0.0]);
        assert!((r.envelope_value - 1.005).abs() < 1e-15);
        let z = prox_l0(&DVector::zeros(4), 0.3).unwrap();
        assert_eq!(z.point, DVector::zeros(4));
        assert_eq!(z.envelope_value, 0.0);
        // boundary 0.5 * 2^2 = 2: kept
        let b = prox_l0(&DVector::from_vec(vec![2.0]), 2.0).unwrap();
        assert_eq!(b.point[0], 2.0);
        assert_eq!(b.envelope_value, 1.0);
    }

    #[test]
    fn sparsity_examples() {
        let beta = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let r = project_sparsity(&beta, 2).unwrap();
        assert_eq!(r.point.as_slice(), &[3.0, 0.0, 2.0]);
        assert_eq!(r.sq_distance, 1.0);
        assert_eq!(r.envelope_value, 0.5);
        let full = project_sparsity(&beta, 3).unwrap();
        assert_eq!(full.point, beta);
        assert_eq!(full.sq_distance, 0.0);
        let none = project_sparsity(&beta, 0).unwrap();
        assert_eq!(none.point, DVector::zeros(3));
        assert_eq!(none.sq_distance, 14.0);
    }

    #[test]
    fn sparsity_tie_keeps_lower_index() {
        let beta = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let r = project_sparsity(&beta, 1).unwrap();
        assert_eq!(r.point.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn spectral_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let r = project_rank(&d, 1).unwrap();
        assert!((r.point.clone() - DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.0]))).norm() < 1e-12);
        assert!((r.sq_distance - 1.0).abs() < 1e-12);
        let full = project_rank(&d, 2).unwrap();
        assert!((full.point - &d).norm() < 1e-12);
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let v = DVector::from_vec(vec![0.5, 3.0]);
        let outer = &u * v.transpose();
        let r1 = project_rank(&outer, 1).unwrap();
        assert!((r1.point - &outer).norm() < 1e-12);
        assert!(r1.sq_distance < 1e-20);

        let d2 = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.5]));
        let n = prox_nuclear(&d2, 1.0).unwrap();
        assert!((n.point - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]))).norm() < 1e-12);
        assert!((n.envelope_value - 2.625).abs() < 1e-12);
        let z = prox_nuclear(&DMatrix::zeros(2, 3), 0.4).unwrap();
        assert_eq!(z.point.norm(), 0.0);

        let d3 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let h = prox_rank_fn(&d3, 1.0).unwrap();
        assert!((h.point - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]))).norm() < 1e-12);
        assert!((h.envelope_value - 1.125).abs() < 1e-12);
        let hz = prox_rank_fn(&DMatrix::zeros(3, 2), 1.0).unwrap();
        assert_eq!(hz.envelope_value, 0.0);
    }
}
