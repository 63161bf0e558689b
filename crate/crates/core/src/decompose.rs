//! Gram matrix factorizations that are computed once and reused.
//!
//! A [`FactorCache`] holds `X^T X` together with its Cholesky factor and, on
//! request, its eigendecomposition. Every MM estimator in this crate solves
//! its per-iteration least squares problem against one of these caches, so
//! the number of factorizations per fit is a constant independent of the
//! iteration count. Factorizations are tallied per thread (see
//! [`factor_tally`]) so callers can audit that contract.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MmError, Result};

/// Count of factorizations performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorTally {
    pub cholesky: usize,
    pub spectral: usize,
}

impl FactorTally {
    pub fn total(&self) -> usize {
        self.cholesky + self.spectral
    }

    pub fn since(&self, earlier: FactorTally) -> FactorTally {
        FactorTally { cholesky: self.cholesky - earlier.cholesky, spectral: self.spectral - earlier.spectral }
    }
}

thread_local! {
    static TALLY: Cell<FactorTally> = const { Cell::new(FactorTally { cholesky: 0, spectral: 0 }) };
}

/// Factorizations performed so far on the calling thread.
pub fn factor_tally() -> FactorTally {
    TALLY.with(|t| t.get())
}

fn bump(cholesky: usize, spectral: usize) {
    TALLY.with(|t| {
        let mut v = t.get();
        v.cholesky += cholesky;
        v.spectral += spectral;
        t.set(v);
    });
}

/// Eigendecomposition `U diag(values) U^T` with values in descending order.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl Spectral {
    /// Decomposes a symmetric matrix. Counts as one spectral factorization.
    pub fn of_symmetric(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(MmError::domain("eigendecomposition needs a square matrix"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(MmError::domain("matrix has non-finite entries"));
        }
        let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0)
            .ok_or_else(|| MmError::Singular("symmetric eigensolver did not converge".into()))?;
        bump(0, 1);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let vectors = DMatrix::from_fn(a.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
        let values = DVector::from_iterator(order.len(), order.iter().map(|&j| eig.eigenvalues[j]));
        Ok(Self { vectors, values })
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, v) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*v);
        }
        scaled * self.vectors.transpose()
    }
}

/// Immutable Gram matrix plus the factorizations requested at construction.
#[derive(Debug, Clone)]
pub struct FactorCache {
    gram: DMatrix<f64>,
    cholesky: Option<DMatrix<f64>>,
    spectral: Option<Spectral>,
    ridge: f64,
    factor_count: usize,
}

impl FactorCache {
    /// Builds from a precomputed symmetric Gram matrix.
    pub fn from_gram(gram: DMatrix<f64>, ridge: f64, need_cholesky: bool, need_spectral: bool) -> Result<Self> {
        if !gram.is_square() || gram.nrows() == 0 {
            return Err(MmError::domain("gram matrix must be square and nonempty"));
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(MmError::domain(format!("ridge must be nonnegative, got {ridge}")));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(MmError::domain("gram matrix has non-finite entries"));
        }
        let mut factor_count = 0;
        let cholesky = if need_cholesky {
            factor_count += 1;
            Some(cholesky_lower(&gram, ridge)?)
        } else {
            None
        };
        let spectral = if need_spectral {
            factor_count += 1;
            Some(Spectral::of_symmetric(&gram)?)
        } else {
            None
        };
        Ok(Self { gram, cholesky, spectral, ridge, factor_count })
    }

    /// Eigendecomposition of `X^T X` only, for solves whose shift varies.
    pub fn spectral_only(x: &DMatrix<f64>) -> Result<Self> {
        validate_design(x)?;
        Self::from_gram(x.tr_mul(x), 0.0, false, true)
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// Lower-triangular `L` with `L L^T = X^T X + ridge I`.
    pub fn cholesky_factor(&self) -> Option<&DMatrix<f64>> {
        self.cholesky.as_ref()
    }

    pub fn spectral(&self) -> Option<&Spectral> {
        self.spectral.as_ref()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Number of factorizations performed when this cache was built.
    pub fn factor_count(&self) -> usize {
        self.factor_count
    }

    /// Solves `(X^T X + ridge I) beta = rhs` with the cached Cholesky factor.
    pub fn solve_normal(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let l =
            self.cholesky.as_ref().ok_or_else(|| MmError::State("cache was built without a Cholesky factor".into()))?;
        if rhs.len() != l.nrows() {
            return Err(MmError::domain(format!("rhs has length {}, expected {}", rhs.len(), l.nrows())));
        }
        let mut out = rhs.clone();
        triangular_solve_pair(l, out.as_mut_slice(), 1);
        Ok(out)
    }

    /// Column-by-column version of [`FactorCache::solve_normal`].
    pub fn solve_normal_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l =
            self.cholesky.as_ref().ok_or_else(|| MmError::State("cache was built without a Cholesky factor".into()))?;
        if rhs.nrows() != l.nrows() {
            return Err(MmError::domain("rhs row count does not match the gram dimension"));
        }
        let mut out = rhs.clone();
        let cols = out.ncols();
        triangular_solve_pair(l, out.as_mut_slice(), cols);
        Ok(out)
    }

    /// Solves `(scale X^T X + lambda I) beta = rhs` against the cached
    /// eigendecomposition, valid for every `lambda` without refactorizing.
    pub fn solve_ridge_spectral(&self, scale: f64, lambda: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let sp =
            self.spectral.as_ref().ok_or_else(|| MmError::State("cache was built without a spectral factor".into()))?;
        if rhs.len() != sp.values.len() {
            return Err(MmError::domain(format!("rhs has length {}, expected {}", rhs.len(), sp.values.len())));
        }
        if !(scale > 0.0) || lambda < 0.0 {
            return Err(MmError::domain(format!("need scale > 0 and lambda >= 0, got {scale}, {lambda}")));
        }
        let mut coef = sp.vectors.tr_mul(rhs);
        for (c, &ev) in coef.iter_mut().zip(sp.values.iter()) {
            let d = scale * ev.max(0.0) + lambda;
            if !(d > 0.0) {
                return Err(MmError::Singular(format!("scale * eigenvalue + lambda = {d} is not positive")));
            }
            *c /= d;
        }
        Ok(&sp.vectors * coef)
    }
}

fn validate_design(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(MmError::domain("design matrix must have at least one row and column"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MmError::domain("design matrix has non-finite entries"));
    }
    Ok(())
}

/// Computes `X^T X` once and factorizes it.
///
/// A Cholesky factor of `X^T X + ridge I` is always built; the
/// eigendecomposition of `X^T X` only when `need_spectral` is set.
pub fn build_cache(x: &DMatrix<f64>, ridge: f64, need_spectral: bool) -> Result<FactorCache> {
    validate_design(x)?;
    FactorCache::from_gram(x.tr_mul(x), ridge, true, need_spectral)
}

/// Ridge used when the plain Gram matrix is not numerically definite.
pub fn fallback_ridge(gram: &DMatrix<f64>) -> f64 {
    let p = gram.nrows().max(1) as f64;
    1e-8 * gram.trace() / p
}

/// Builds a Cholesky cache, retrying once with [`fallback_ridge`].
pub fn build_cache_with_fallback(x: &DMatrix<f64>, need_spectral: bool) -> Result<FactorCache> {
    validate_design(x)?;
    let gram = x.tr_mul(x);
    match FactorCache::from_gram(gram.clone(), 0.0, true, need_spectral) {
        Ok(c) => Ok(c),
        Err(MmError::Factorization(_)) => {
            let ridge = fallback_ridge(&gram);
            log::warn!("gram matrix not definite; retrying with ridge {ridge:e}");
            FactorCache::from_gram(gram, ridge, true, need_spectral)
        }
        Err(e) => Err(e),
    }
}

fn cholesky_lower(gram: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let p = gram.nrows();
    let max_diag = gram.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs())) + ridge;
    let floor = 1e-13 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(p, p);
    bump(1, 0);
    for j in 0..p {
        let mut d = gram[(j, j)] + ridge;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(MmError::Factorization(format!("pivot {j} is {d:e}, gram matrix is not positive definite")));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..p {
            let mut s = gram[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// In-place `L^{-T} L^{-1}` applied to each column of a column-major block.
fn triangular_solve_pair(l: &DMatrix<f64>, data: &mut [f64], cols: usize) {
    let p = l.nrows();
    for c in 0..cols {
        let b = &mut data[c * p..(c + 1) * p];
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
        for i in (0..p).rev() {
            let mut s = b[i];
            for k in (i + 1)..p {
                s -= l[(k, i)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
    }
}

/// Spectral factors for `X^T X Delta E + lambda Delta = C`.
///
/// Right-multiplying by `E^{-1}` turns this into the Sylvester equation
/// `X^T X Delta + lambda Delta E^{-1} = C E^{-1}`, which diagonalizes under
/// the eigenbases of `X^T X` and `E^{-1}`.
#[derive(Debug, Clone)]
pub struct SylvesterFactors {
    pub spectral_a: Spectral,
    pub spectral_e_inv: Spectral,
}

impl SylvesterFactors {
    /// Two eigendecompositions: one of `gram`, one of `e_inv`.
    pub fn new(gram: &DMatrix<f64>, e_inv: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { spectral_a: Spectral::of_symmetric(gram)?, spectral_e_inv: Spectral::of_symmetric(e_inv)? })
    }

    pub fn rows(&self) -> usize {
        self.spectral_a.values.len()
    }

    pub fn cols(&self) -> usize {
        self.spectral_e_inv.values.len()
    }
}

/// Solves `X^T X Delta E + lambda Delta = C` for `Delta`.
pub fn sylvester_solve(factors: &SylvesterFactors, lambda: f64, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, k) = (factors.rows(), factors.cols());
    if c.nrows() != p || c.ncols() != k {
        return Err(MmError::domain(format!("right-hand side is {}x{}, expected {p}x{k}", c.nrows(), c.ncols())));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(MmError::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let u = &factors.spectral_a.vectors;
    let v = &factors.spectral_e_inv.vectors;
    let mut z = u.tr_mul(c) * v;
    for j in 0..k {
        let s2 = factors.spectral_e_inv.values[j];
        for i in 0..p {
            let s1 = factors.spectral_a.values[i].max(0.0);
            let d = s1 + lambda * s2;
            if !(d > 0.0) {
                return Err(MmError::Singular(format!("Sylvester denominator {d} at ({i}, {j})")));
            }
            z[(i, j)] *= s2 / d;
        }
    }
    Ok(u * z * v.transpose())
}

/// Bohning's curvature bound `E = (I - 11^T / c) / 2` on `c - 1` categories,
/// together with its closed-form inverse `2 (I + 11^T)`.
pub fn bohning_e(c: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if c < 2 {
        return Err(MmError::domain(format!("need at least two categories, got {c}")));
    }
    let m = c - 1;
    let cf = c as f64;
    let e = DMatrix::from_fn(m, m, |i, j| 0.5 * (f64::from(u8::from(i == j)) - 1.0 / cf));
    let e_inv = DMatrix::from_fn(m, m, |i, j| 2.0 * (f64::from(u8::from(i == j)) + 1.0));
    Ok((e, e_inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cache() {
        let c = build_cache(&DMatrix::identity(2, 2), 0.0, false).unwrap();
        assert_eq!(c.gram(), &DMatrix::identity(2, 2));
        assert_eq!(c.cholesky_factor().unwrap(), &DMatrix::identity(2, 2));
        assert_eq!(c.factor_count(), 1);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(c.solve_normal(&e1).unwrap(), e1);
    }

    #[test]
    fn one_column_cache() {
        let x = DMatrix::from_vec(2, 1, vec![1.0, 1.0]);
        let c = build_cache(&x, 0.0, true).unwrap();
        assert_eq!(c.gram()[(0, 0)], 2.0);
        assert!((c.cholesky_factor().unwrap()[(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.factor_count(), 2);
        let b = c.solve_normal(&DVector::from_vec(vec![4.0])).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_columns_need_ridge() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(matches!(build_cache(&x, 0.0, false), Err(MmError::Factorization(_))));
        assert!(build_cache(&x, 1e-8, false).is_ok());
        let c = build_cache_with_fallback(&x, false).unwrap();
        assert!(c.ridge() > 0.0);
    }

    #[test]
    fn missing_factor_is_state_error() {
        let x = DMatrix::identity(3, 3);
        let c = FactorCache::spectral_only(&x).unwrap();
        assert!(matches!(c.solve_normal(&DVector::zeros(3)), Err(MmError::State(_))));
        let c2 = build_cache(&x, 0.0, false).unwrap();
        assert!(matches!(c2.solve_ridge_spectral(1.0, 1.0, &DVector::zeros(3)), Err(MmError::State(_))));
    }

    #[test]
    fn ridge_spectral_scalar() {
        let x = DMatrix::from_vec(1, 1, vec![1.0]);
        let c = FactorCache::spectral_only(&x).unwrap();
        let b = c.solve_ridge_spectral(1.0, 1.0, &DVector::from_vec(vec![2.0])).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-15);
        let z = FactorCache::spectral_only(&DMatrix::zeros(2, 1)).unwrap();
        assert!(matches!(z.solve_ridge_spectral(1.0, 0.0, &DVector::from_vec(vec![1.0])), Err(MmError::Singular(_))));
    }

    #[test]
    fn sylvester_scalar() {
        let (_, e_inv) = bohning_e(2).unwrap();
        let f = SylvesterFactors::new(&DMatrix::from_vec(1, 1, vec![2.0]), &e_inv).unwrap();
        let d = sylvester_solve(&f, 1.0, &DMatrix::from_vec(1, 1, vec![3.0])).unwrap();
        assert!((d[(0, 0)] - 2.0).abs() < 1e-14);
        let zero = sylvester_solve(&f, 1.0, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(zero[(0, 0)], 0.0);
        assert!(sylvester_solve(&f, 1.0, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn bohning_examples() {
        let (e, ei) = bohning_e(2).unwrap();
        assert!((e[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(ei[(0, 0)], 4.0);
        let (e3, ei3) = bohning_e(3).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, 1.0 / 3.0]);
        assert!((e3.clone() - want).norm() < 1e-15);
        assert_eq!(ei3, DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0]));
        for c in 2..9 {
            let (e, ei) = bohning_e(c).unwrap();
            assert!((&e * &ei - DMatrix::identity(c - 1, c - 1)).norm() < 1e-12);
            let sp = Spectral::of_symmetric(&e).unwrap();
            assert!(sp.values.iter().all(|&v| v > 0.0));
        }
        assert!(bohning_e(1).is_err());
    }

    #[test]
    fn tally_counts_every_factorization() {
        let before = factor_tally();
        let x = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + if i == j { 2.0 } else { 0.0 });
        let c = build_cache(&x, 0.0, true).unwrap();
        for _ in 0..10 {
            c.solve_normal(&DVector::from_element(3, 1.0)).unwrap();
            c.solve_ridge_spectral(2.0, 0.5, &DVector::from_element(3, 1.0)).unwrap();
        }
        let d = factor_tally().since(before);
        assert_eq!(d, FactorTally { cholesky: 1, spectral: 1 });
        assert_eq!(c.factor_count(), 2);
    }
}
