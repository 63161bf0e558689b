mod common;

use common::{design_with_intercept, gaussian_vector, rng, zoom_min};
use mmreg::decompose::{build_cache, FactorCache};
use mmreg::estimators::*;
use mmreg::mmengine::*;
use mmreg::prox::prox_abs;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn probes(g: &mut rand_chacha::ChaCha20Rng, center: &DVector<f64>, count: usize) -> Vec<DVector<f64>> {
    (0..count).map(|_| center + gaussian_vector(g, center.len()) * 2.0).collect()
}

#[test]
fn lad_three_points_match_grid() {
    let data = RegressionData::new(DMatrix::from_element(3, 1, 1.0), DVector::from_vec(vec![1.0, 2.0, 100.0])).unwrap();
    let mu = 0.1;
    let opts = MMOptions::default().with_tol(f64::MIN_POSITIVE).with_max_iter(100_000);
    let fit = fit_lad(&data, mu, &opts).unwrap();
    let f = |b: f64| lad_objective(&data.x, &data.y, &DVector::from_element(1, b), mu);
    let (b_star, f_star) = zoom_min(f, 0.0, 100.0, 10_001, 4);
    assert!((fit.objective - f_star).abs() < 1e-6);
    assert!((fit.beta[0] - b_star).abs() < 1e-6);
    assert!((fit.beta[0] - 2.0).abs() < 0.1);
    assert_eq!(fit.count_descent_violations(), 0);
}

#[test]
fn deweighted_lad_step_equals_moreau_step() {
    let mut g = rng(21);
    for case in 0..100 {
        let n = g.random_range(5..=200);
        let p = g.random_range(1..=20usize).min(n - 1).max(1);
        let x = design_with_intercept(&mut g, n, p);
        let y = gaussian_vector(&mut g, n) * 3.0;
        let data = RegressionData::new(x, y).unwrap();
        let mu = g.random_range(0.01..2.0);
        let cache = build_cache(&data.x, 1e-8, false).unwrap();
        let problem = LadProblem::new(&data, mu, &cache).unwrap();
        let anchor = gaussian_vector(&mut g, p);
        let fitted = &data.x * &anchor;
        let r = &data.y - &fitted;
        let w = lad_best_quadratic_weights(&r, mu);
        let deweighted = deweight(&data.y, &fitted, &w).unwrap();
        let moreau = problem.shifted_responses(&anchor);
        for i in 0..n {
            let direct = data.y[i] - prox_abs(r[i], mu).unwrap();
            assert!((deweighted[i] - moreau[i]).abs() <= 1e-12 * (1.0 + data.y[i].abs()), "case {case} row {i}");
            assert!((direct - moreau[i]).abs() <= 1e-12 * (1.0 + data.y[i].abs()));
        }
    }
}

#[test]
fn quadratic_surrogates_sandwich_objective() {
    let mut g = rng(22);
    let x = design_with_intercept(&mut g, 80, 5);
    let y = gaussian_vector(&mut g, 80);
    let data = RegressionData::new(x, y).unwrap();
    let cache = build_cache(&data.x, 0.0, true).unwrap();
    let spec = QuantileSpec::new(0.7, 0.3).unwrap();
    let mut lad = LadProblem::new(&data, 0.3, &cache).unwrap();
    let mut quant = QuantileProblem::new(&data, spec, &cache);
    let mut ridge = QuantileProblem::with_ridge(&data, spec, &cache, 0.5).unwrap();
    let problems: [&mut dyn MmProblem; 3] = [&mut lad, &mut quant, &mut ridge];
    for problem in problems {
        for _ in 0..100 {
            let a = gaussian_vector(&mut g, 5);
            let gaps = surrogate_gaps(problem, &a, &probes(&mut g, &a, 100)).unwrap();
            assert!(gaps.touch <= 1e-10, "{gaps:?}");
            assert!(gaps.excess <= 1e-10, "{gaps:?}");
        }
    }
}

#[test]
fn surrogate_minimizer_never_increases_objective() {
    let mut g = rng(23);
    let x = design_with_intercept(&mut g, 60, 4);
    let y = gaussian_vector(&mut g, 60);
    let data = RegressionData::new(x, y).unwrap();
    let cache = build_cache(&data.x, 0.0, false).unwrap();
    let mut lad = LadProblem::new(&data, 0.2, &cache).unwrap();
    for _ in 0..100 {
        let a = gaussian_vector(&mut g, 4);
        let next = lad.surrogate_argmin(&a).unwrap();
        assert!(is_descent(lad.objective(&a), lad.objective(&next)));
        let g_next = lad.surrogate_value(&next, &a).unwrap();
        for b in probes(&mut g, &a, 20) {
            assert!(g_next <= lad.surrogate_value(&b, &a).unwrap() + 1e-9);
        }
    }
}

fn accelerated_pair<F>(fit: F) -> (FitResult, FitResult)
where
    F: Fn(&MMOptions) -> FitResult,
{
    let base = MMOptions::default().with_tol(1e-12).with_max_iter(200_000);
    (fit(&base), fit(&base.clone().accelerated(true)))
}

#[test]
fn acceleration_is_safe() {
    let mut g = rng(24);
    for case in 0..10 {
        let x = design_with_intercept(&mut g, 150, 6);
        let truth = gaussian_vector(&mut g, 6);
        let y = &x * &truth + gaussian_vector(&mut g, 150);
        let data = RegressionData::new(x.clone(), y).unwrap();
        let spec = QuantileSpec::new(0.3, 0.1).unwrap();
        let ybin = (&x * &truth).map(|v| f64::from(u8::from(v + g.random_range(-2.0..2.0) > 0.0)));
        let binary = RegressionData::new(x, ybin).unwrap();
        let pairs = [
            accelerated_pair(|o| fit_lad(&data, 0.1, o).unwrap()),
            accelerated_pair(|o| fit_quantile(&data, spec, o).unwrap()),
            accelerated_pair(|o| fit_logistic(&binary, o).unwrap()),
        ];
        for (plain, fast) in pairs {
            assert!(plain.converged && fast.converged);
            assert_eq!(fast.count_descent_violations(), 0, "case {case}");
            let gap = (plain.objective - fast.objective).abs() / (1.0 + plain.objective.abs());
            assert!(gap <= 1e-8, "case {case}: gap {gap:e}");
        }
    }
}

#[test]
fn gradient_sum_bound_on_convergent_runs() {
    let mut g = rng(25);
    for _ in 0..10 {
        let x = design_with_intercept(&mut g, 120, 5);
        let y = gaussian_vector(&mut g, 120);
        let data = RegressionData::new(x, y).unwrap();
        let opts = MMOptions { trace_gradients: true, ..MMOptions::default().with_tol(1e-10) };
        let runs = [
            fit_lad(&data, 0.2, &opts).unwrap(),
            fit_quantile(&data, QuantileSpec::new(0.6, 0.2).unwrap(), &opts).unwrap(),
        ];
        for fit in runs {
            assert!(fit.converged);
            let l = fit.diagnostics.lipschitz_l.unwrap();
            let bound = 2.0 * l * (fit.history[0] - fit.objective);
            assert!(fit.diagnostics.grad_norm_sq_sum <= bound * (1.0 + 1e-9) + 1e-12);
        }
    }
}

#[test]
fn ridge_quantile_meets_rate_bound() {
    let mut g = rng(26);
    let x = design_with_intercept(&mut g, 100, 4);
    let y = gaussian_vector(&mut g, 100);
    let data = RegressionData::new(x, y).unwrap();
    let cache = FactorCache::spectral_only(&data.x).unwrap();
    let spec = QuantileSpec::new(0.5, 0.5).unwrap();
    let opts = MMOptions { trace_gradients: true, ..MMOptions::default().with_tol(1e-12) };
    let mut problem = QuantileProblem::with_ridge(&data, spec, &cache, 0.3).unwrap();
    let fit = run_mm(&mut problem, DVector::zeros(4), &opts).unwrap();
    let mut again = QuantileProblem::with_ridge(&data, spec, &cache, 0.3).unwrap();
    let f_star =
        run_mm(&mut again, fit.beta.clone(), &MMOptions::default().with_tol(f64::MIN_POSITIVE)).unwrap().objective;
    let report = check_rate_bound(&fit.diagnostics, &fit.history, f_star).unwrap();
    assert_eq!(report.geometric_violations, 0);
    assert!(report.grad_sum_ok);
    assert!(report.factor > 0.0 && report.factor < 1.0);
}

#[test]
fn rate_bound_needs_constants() {
    let diag = ConvergenceDiagnostics::default();
    assert!(check_rate_bound(&diag, &[1.0, 0.5], 0.0).is_err());
}
