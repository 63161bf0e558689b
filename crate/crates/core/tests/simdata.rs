mod common;

use common::median;
use mmreg::simdata::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn adjacent_columns_have_target_correlation() {
    let x = gen_design(&SimSpec::new(100_000, 4, 1)).unwrap();
    let (a, b) = (x.column(1), x.column(2));
    let n = x.nrows() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let cov = a.iter().zip(b.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / (n - 1.0);
    assert!((cov - 0.7).abs() <= 0.02, "covariance {cov}");
    assert!(x.column(0).iter().all(|&v| v == 1.0));
}

#[test]
fn null_bernoulli_mean_is_one_half() {
    let x = DMatrix::from_element(100_000, 1, 1.0);
    let GlmResponse::Binary(y) = gen_glm_response(&x, &DMatrix::zeros(1, 1), GlmFamily::Bernoulli, 2).unwrap() else {
        panic!("binary response expected")
    };
    assert!((y.mean() - 0.5).abs() <= 0.01);
}

#[test]
fn heavy_tailed_noise_has_zero_quantile_after_drift() {
    let n = 100_000;
    let x = DMatrix::from_element(n, 1, 1.0);
    let beta = DVector::from_element(1, 2.0);
    for q in [0.1, 0.5, 0.9] {
        let y = gen_quantile_response(&x, &beta, q, Noise::StudentT { df: 1.5 }, 3).unwrap();
        let mut r: Vec<f64> = (y - &x * &beta).iter().copied().collect();
        r.sort_by(f64::total_cmp);
        let emp = r[(q * n as f64) as usize];
        assert!(emp.abs() <= 0.05, "q {q}: {emp}");
    }
    assert_eq!(Noise::Gaussian { sd: 3.0 }.quantile(0.5).unwrap(), 0.0);
}

/// AR(1) covariance inverse, tridiagonal.
fn ar1_precision(d: usize, rho: f64) -> DMatrix<f64> {
    let s = DMatrix::from_fn(d, d, |i, j| rho.powi((i as i32 - j as i32).abs()));
    s.try_inverse().unwrap()
}

/// Pearson statistic of Mahalanobis distances against a chi-square law,
/// using equal-probability bins.
fn mahalanobis_gof(x: &DMatrix<f64>, rho: f64, bins: usize) -> f64 {
    let d = x.ncols() - 1;
    let prec = ar1_precision(d, rho);
    let law = ChiSquared::new(d as f64).unwrap();
    let mut counts = vec![0usize; bins];
    for row in x.row_iter() {
        let z = row.columns(1, d).transpose();
        let m = (z.transpose() * &prec * &z)[(0, 0)];
        let k = ((law.cdf(m) * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let expect = x.nrows() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn design_rows_pass_mahalanobis_goodness_of_fit() {
    let mut pvals: Vec<f64> = (0..20)
        .map(|seed| mahalanobis_gof(&gen_design(&SimSpec::new(10_000, 6, 100 + seed)).unwrap(), 0.7, 20))
        .collect();
    assert!(pvals.iter().all(|&p| p > 0.001), "{pvals:?}");
    // Under the null the p-values are uniform.
    assert!((median(&mut pvals) - 0.5).abs() < 0.35);
}

#[test]
fn contamination_follows_row_convention() {
    let x = gen_design(&SimSpec::new(37, 3, 5)).unwrap();
    let beta = default_truth_beta(3);
    let c = Contamination { fraction: 0.1, shift: 10.0 };
    let (head, tail) = c.rows(37);
    assert_eq!((head, tail), (0..3, 34..37));
    let (clean, _) = gen_l2e_response(&x, &beta, Contamination { fraction: 0.0, shift: 10.0 }, 6).unwrap();
    let (y, xc) = gen_l2e_response(&x, &beta, c, 6).unwrap();
    assert_eq!((&y - &clean).iter().filter(|&&v| v != 0.0).count(), 3);
    assert_eq!((&xc - &x).iter().filter(|&&v| v != 0.0).count(), 3);
    assert!(gen_l2e_response(&x, &beta, Contamination { fraction: 0.6, shift: 1.0 }, 6).is_err());
}

#[test]
fn multinomial_labels_cover_categories() {
    let x = gen_design(&SimSpec::new(3000, 3, 8)).unwrap();
    let b = multinomial_truth(3, 4, 8).unwrap();
    let GlmResponse::Labels(l) = gen_glm_response(&x, &b, GlmFamily::Multinomial(4), 8).unwrap() else {
        panic!("labels expected")
    };
    for c in 0..4 {
        let share = l.iter().filter(|&&v| v == c).count() as f64 / 3000.0;
        assert!(share > 0.1 && share < 0.4, "category {c}: {share}");
    }
}

#[test]
fn sparse_truth_entries() {
    let b = sparse_truth_beta(500).unwrap();
    assert_eq!((b[0], b[1], b[2], b[12]), (4.0, 0.0, 1.8, -1.0));
    assert_eq!(b.iter().filter(|&&v| v != 0.0).count(), 11);
    assert!(sparse_truth_beta(20).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = SimSpec::new(10, 3, 1);
    s.rho = 1.0;
    assert!(gen_design(&s).is_err());
    assert!(gen_design(&SimSpec::new(0, 3, 1)).is_err());
    let x = gen_design(&SimSpec::new(10, 3, 1)).unwrap();
    assert!(gen_quantile_response(&x, &DVector::zeros(2), 0.5, Noise::Gaussian { sd: 1.0 }, 1).is_err());
    assert!(gen_quantile_response(&x, &DVector::zeros(3), 1.0, Noise::Gaussian { sd: 1.0 }, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generators_are_pure(seed in any::<u64>(), n in 1usize..60, p in 2usize..6, q in 0.05..0.95f64) {
        let spec = SimSpec::new(n, p, seed);
        let x = gen_design(&spec).unwrap();
        prop_assert_eq!(&x, &gen_design(&spec).unwrap());
        let beta = default_truth_beta(p);
        let noise = Noise::StudentT { df: 3.0 };
        prop_assert_eq!(
            gen_quantile_response(&x, &beta, q, noise, seed).unwrap(),
            gen_quantile_response(&x, &beta, q, noise, seed).unwrap()
        );
        let b = DMatrix::from_column_slice(p, 1, beta.as_slice());
        prop_assert_eq!(
            gen_glm_response(&x, &b, GlmFamily::Bernoulli, seed).unwrap(),
            gen_glm_response(&x, &b, GlmFamily::Bernoulli, seed).unwrap()
        );
        prop_assert_eq!(lowrank_truth(p, 3, 1, seed).unwrap(), lowrank_truth(p, 3, 1, seed).unwrap());
    }
}
