//! Seeded simulation protocols.
//!
//! All randomness comes from ChaCha20 (`rand_chacha` 0.9) seeded with
//! `seed_from_u64`. Separate stream ids keep designs, responses and label
//! draws independent for a single seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist, StudentsT};

use crate::error::{MmError, Result};
use crate::estimators::{multinomial_probs, MultinomialModel};
use crate::prox::project_rank;

const STREAM_DESIGN: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_COEF: u64 = 3;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Noise {
    Gaussian { sd: f64 },
    StudentT { df: f64 },
}

impl Noise {
    fn validate(&self) -> Result<()> {
        match *self {
            Noise::Gaussian { sd } if sd >= 0.0 && sd.is_finite() => Ok(()),
            Noise::StudentT { df } if df > 0.0 && df.is_finite() => Ok(()),
            other => Err(MmError::domain(format!("invalid noise {other:?}"))),
        }
    }

    /// `F^{-1}(q)`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(MmError::domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        self.validate()?;
        Ok(match *self {
            Noise::Gaussian { sd: 0.0 } => 0.0,
            Noise::Gaussian { sd } => NormalDist::new(0.0, sd).expect("validated").inverse_cdf(q),
            Noise::StudentT { df } => StudentsT::new(0.0, 1.0, df).expect("validated").inverse_cdf(q),
        })
    }

    fn sample_n(&self, n: usize, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match *self {
            Noise::Gaussian { sd } => (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect(),
            Noise::StudentT { df } => {
                let t = StudentT::new(df).map_err(|e| MmError::domain(e.to_string()))?;
                (0..n).map(|_| t.sample(rng)).collect()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub fraction: f64,
    pub shift: f64,
}

impl Default for Contamination {
    fn default() -> Self {
        Self { fraction: 0.1, shift: 10.0 }
    }
}

impl Contamination {
    /// Rows `0..m` and `n - m..n` with `m = floor(fraction * n)`.
    pub fn rows(&self, n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let m = (self.fraction * n as f64).floor() as usize;
        (0..m, n - m..n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub noise: Noise,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination: Option<Contamination>,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        Self { n, p, rho: 0.7, noise: Noise::Gaussian { sd: 1.0 }, quantile_q: None, contamination: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(MmError::domain("n and p must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(MmError::domain(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        self.noise.validate()?;
        if let Some(q) = self.quantile_q {
            if !(q > 0.0 && q < 1.0) {
                return Err(MmError::domain(format!("quantile level must lie in (0, 1), got {q}")));
            }
        }
        if let Some(c) = self.contamination {
            if !(0.0..=0.5).contains(&c.fraction) || !c.shift.is_finite() {
                return Err(MmError::domain("contamination fraction must lie in [0, 0.5]"));
            }
        }
        Ok(())
    }
}

/// Intercept column followed by `p - 1` Gaussian columns with
/// `cov(x_j, x_k) = rho^|j - k|`, drawn row by row from the AR(1) recursion
/// `x_1 = z_1`, `x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j`.
pub fn gen_design(spec: &SimSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, STREAM_DESIGN);
    let (n, p, rho) = (spec.n, spec.p, spec.rho);
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::from_element(n, p, 1.0);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 1..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = if j == 1 { z } else { rho * prev + innov * z };
            x[(i, j)] = prev;
        }
    }
    Ok(x)
}

/// `y_i = x_i^T beta* + (x_ip / 2 + 1)(eps_i - F^{-1}(q))` with `x_ip` the
/// last design column.
pub fn gen_quantile_response(
    x: &DMatrix<f64>,
    beta_star: &DVector<f64>,
    q: f64,
    noise: Noise,
    seed: u64,
) -> Result<DVector<f64>> {
    if x.ncols() != beta_star.len() {
        return Err(MmError::domain("design and coefficient dimensions disagree"));
    }
    let drift = noise.quantile(q)?;
    let mut rng = rng_for(seed, STREAM_NOISE);
    let eps = noise.sample_n(x.nrows(), &mut rng)?;
    let last = x.ncols() - 1;
    let mean = x * beta_star;
    Ok(DVector::from_fn(x.nrows(), |i, _| mean[i] + (x[(i, last)] / 2.0 + 1.0) * (eps[i] - drift)))
}

/// Standard normal errors, then `+shift` to the response of the first
/// `floor(fraction n)` rows and `+shift` to the second design column of the
/// last `floor(fraction n)` rows. Returns the response and the contaminated
/// design.
pub fn gen_l2e_response(
    x: &DMatrix<f64>,
    beta_star: &DVector<f64>,
    contamination: Contamination,
    seed: u64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.ncols() != beta_star.len() {
        return Err(MmError::domain("design and coefficient dimensions disagree"));
    }
    if !(0.0..=0.5).contains(&contamination.fraction) {
        return Err(MmError::domain("contamination fraction must lie in [0, 0.5]"));
    }
    let mut rng = rng_for(seed, STREAM_NOISE);
    let eps = Noise::Gaussian { sd: 1.0 }.sample_n(x.nrows(), &mut rng)?;
    let mut y = x * beta_star + DVector::from_vec(eps);
    let mut xc = x.clone();
    let (head, tail) = contamination.rows(x.nrows());
    for i in head {
        y[i] += contamination.shift;
    }
    if x.ncols() > 1 {
        for i in tail {
            xc[(i, 1)] += contamination.shift;
        }
    }
    Ok((y, xc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlmFamily {
    Bernoulli,
    Multinomial(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GlmResponse {
    /// 0/1 responses.
    Binary(DVector<f64>),
    /// Category labels `0..c`.
    Labels(Vec<usize>),
}

/// Draws responses from the logistic or multinomial link. For Bernoulli
/// `b_star` has one column; for `Multinomial(c)` it has `c - 1`.
pub fn gen_glm_response(x: &DMatrix<f64>, b_star: &DMatrix<f64>, family: GlmFamily, seed: u64) -> Result<GlmResponse> {
    if x.ncols() != b_star.nrows() {
        return Err(MmError::domain("design and coefficient dimensions disagree"));
    }
    let mut rng = rng_for(seed, STREAM_LABELS);
    match family {
        GlmFamily::Bernoulli => {
            if b_star.ncols() != 1 {
                return Err(MmError::domain("Bernoulli coefficients must be a single column"));
            }
            let eta = x * b_star.column(0);
            let y = eta.map(|r| {
                let p = 1.0 / (1.0 + (-r).exp());
                let u: f64 = rng.random();
                if u < p {
                    1.0
                } else {
                    0.0
                }
            });
            Ok(GlmResponse::Binary(y))
        }
        GlmFamily::Multinomial(c) => {
            let model = MultinomialModel::new(b_star.clone(), c)?;
            let probs = multinomial_probs(&model, x)?;
            let labels = (0..x.nrows())
                .map(|i| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += probs[(i, j)];
                        if u < acc {
                            return j;
                        }
                    }
                    c - 1
                })
                .collect();
            Ok(GlmResponse::Labels(labels))
        }
    }
}

/// `(1, 0.1, ..., 0.1)`, the default truth for unpenalized models.
pub fn default_truth_beta(p: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| if i == 0 { 1.0 } else { 0.1 })
}

/// `p x (c - 1)` reference-coded coefficients from a `p x c` matrix of
/// Uniform[0, 0.2] draws.
pub fn multinomial_truth(p: usize, c: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p == 0 || c < 2 {
        return Err(MmError::domain("need p >= 1 and c >= 2"));
    }
    let mut rng = rng_for(seed, STREAM_COEF);
    let b = DMatrix::from_fn(p, c, |_, _| 0.2 * rng.random::<f64>());
    Ok(DMatrix::from_fn(p, c - 1, |i, j| b[(i, j)] - b[(i, c - 1)]))
}

/// Intercept 4 and ten alternating-magnitude signals at odd 1-based
/// positions 3..21; zero elsewhere.
pub fn sparse_truth_beta(p: usize) -> Result<DVector<f64>> {
    if p < 21 {
        return Err(MmError::domain(format!("the sparse truth needs p >= 21, got {p}")));
    }
    let mut b = DVector::zeros(p);
    let vals = [4.0, 1.8, 1.6, 1.4, 1.2, 1.0, -1.0, -1.2, -1.4, -1.6, -1.8];
    for (k, v) in vals.into_iter().enumerate() {
        b[2 * k] = v;
    }
    Ok(b)
}

/// `p x (c - 1)` reference-coded coefficients from a `p x c` matrix of
/// Uniform[0, 3] draws whose non-intercept rows are projected to `rank`.
pub fn lowrank_truth(p: usize, c: usize, rank: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p < 2 || c < 2 {
        return Err(MmError::domain("need p >= 2 and c >= 2"));
    }
    let mut rng = rng_for(seed, STREAM_COEF);
    let mut b = DMatrix::from_fn(p, c, |_, _| 3.0 * rng.random::<f64>());
    let tail = b.rows(1, p - 1).into_owned();
    let proj = project_rank(&tail, rank.min(tail.nrows().min(c)))?;
    b.rows_mut(1, p - 1).copy_from(&proj.point);
    let last = b.column(c - 1).into_owned();
    Ok(DMatrix::from_fn(p, c - 1, |i, j| b[(i, j)] - last[i]))
}

/// `max{((log n + p) / n)^0.4, 0.05}`.
pub fn quantile_bandwidth(n: usize, p: usize) -> f64 {
    (((n as f64).ln() + p as f64) / n as f64).powf(0.4).max(0.05)
}

/// `max{0.05, sqrt(q (1 - q)) (log p / n)^0.25}`.
pub fn sparse_bandwidth(n: usize, p: usize, q: f64) -> f64 {
    ((q * (1.0 - q)).sqrt() * ((p as f64).ln() / n as f64).powf(0.25)).max(0.05)
}
