//! Smoothed LAD and quantile regression on heteroskedastic data. Every
//! quantile level reuses one Cholesky factor of X^T X.

use mmreg::decompose::build_cache;
use mmreg::estimators::{fit_lad, fit_quantile_with, QuantileSpec, RegressionData};
use mmreg::mmengine::MMOptions;
use mmreg::simdata::{default_truth_beta, gen_design, gen_quantile_response, quantile_bandwidth, Noise, SimSpec};

fn main() -> mmreg::Result<()> {
    let spec = SimSpec::new(2000, 5, 17);
    let x = gen_design(&spec)?;
    let truth = default_truth_beta(5);
    let noise = Noise::StudentT { df: 1.5 };
    let mu = quantile_bandwidth(spec.n, spec.p);
    let opts = MMOptions::default().with_tol(1e-10);

    let y = gen_quantile_response(&x, &truth, 0.5, noise, 17)?;
    let data = RegressionData::with_intercept_column(x.clone(), y)?;
    let lad = fit_lad(&data, mu, &opts)?;
    println!("LAD: {} iterations, objective {:.6}", lad.iterations, lad.objective);
    println!("     beta {:.3?}", lad.beta.as_slice());

    // Response generated at the median, fitted at several levels on one factorization.
    let cache = build_cache(&data.x, 0.0, false)?;
    for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let fit = fit_quantile_with(&data, QuantileSpec::new(q, mu)?, &cache, None, &opts)?;
        println!(
            "q = {q:<4} intercept {:>8.3}  slope on last column {:>7.3}  ({} iterations)",
            fit.beta[0], fit.beta[4], fit.iterations
        );
    }
    println!("factorizations performed: {}", cache.factor_count());
    Ok(())
}
