//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha20Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Gaussian design with a leading column of ones.
pub fn design_with_intercept(rng: &mut ChaCha20Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = gaussian_matrix(rng, n, p);
    x.column_mut(0).fill(1.0);
    x
}

/// Minimum of `f` over `m` evenly spaced points of `[lo, hi]`.
pub fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> (f64, f64) {
    let step = (hi - lo) / (m - 1) as f64;
    (0..m).map(|i| lo + step * i as f64).fold((lo, f64::INFINITY), |best, v| {
        let fv = f(v);
        if fv < best.1 {
            (v, fv)
        } else {
            best
        }
    })
}

/// Repeated grid search, each round zooming to two cells around the best
/// point. Reaches about `range * (2 / m)^rounds`.
pub fn zoom_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, m: usize, rounds: usize) -> (f64, f64) {
    let mut best = grid_min(&f, lo, hi, m);
    for _ in 1..rounds {
        let step = (hi - lo) / (m - 1) as f64;
        lo = best.0 - step;
        hi = best.0 + step;
        best = grid_min(&f, lo, hi, m);
    }
    best
}

/// Composite Simpson rule with `m` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let inner: f64 = (1..m).map(|i| f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn sigmoid(r: f64) -> f64 {
    1.0 / (1.0 + (-r).exp())
}

/// Logistic maximum likelihood by Newton-Raphson with a fresh Hessian and
/// LU solve every step.
pub fn newton_logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let pr = (x * &beta).map(sigmoid);
        let grad = x.tr_mul(&(y - &pr));
        let w = pr.map(|p| p * (1.0 - p));
        let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
        let hess = x.tr_mul(&xw);
        let step = hess.lu().solve(&grad).expect("nonsingular Hessian");
        beta += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    beta
}

/// Reference-coded multinomial maximum likelihood by Newton-Raphson on
/// `vec(B)`, category `c - 1` as reference.
pub fn newton_multinomial(x: &DMatrix<f64>, labels: &[usize], c: usize) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let k = c - 1;
    let mut b = DMatrix::<f64>::zeros(p, k);
    for _ in 0..100 {
        let r = x * &b;
        let mut grad = DVector::<f64>::zeros(p * k);
        let mut hess = DMatrix::<f64>::zeros(p * k, p * k);
        for i in 0..n {
            let e: Vec<f64> = (0..k).map(|j| r[(i, j)].exp()).collect();
            let z = 1.0 + e.iter().sum::<f64>();
            let pi: Vec<f64> = e.iter().map(|v| v / z).collect();
            for a in 0..k {
                let ya = f64::from(u8::from(labels[i] == a));
                for s in 0..p {
                    grad[a * p + s] += x[(i, s)] * (ya - pi[a]);
                }
                for bb in 0..k {
                    let wab = pi[a] * (f64::from(u8::from(a == bb)) - pi[bb]);
                    for s in 0..p {
                        for t in 0..p {
                            hess[(a * p + s, bb * p + t)] += wab * x[(i, s)] * x[(i, t)];
                        }
                    }
                }
            }
        }
        let step = hess.lu().solve(&grad).expect("nonsingular Hessian");
        for (v, d) in b.iter_mut().zip(step.iter()) {
            *v += d;
        }
        if step.amax() < 1e-13 {
            break;
        }
    }
    b
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Solves `A D E + lambda D = C` through `(E^T (x) A + lambda I) vec(D) = vec(C)`.
pub fn kron_solve(a: &DMatrix<f64>, e: &DMatrix<f64>, lambda: f64, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, k) = c.shape();
    let mut m = kron(&e.transpose(), a);
    for i in 0..p * k {
        m[(i, i)] += lambda;
    }
    let v = m.lu().solve(&DVector::from_column_slice(c.as_slice())).expect("nonsingular system");
    DMatrix::from_column_slice(p, k, v.as_slice())
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn orthogonal(rng: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, n, n).qr().q()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}
