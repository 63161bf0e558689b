//! Restarted Nesterov extrapolation on a smoothed quantile fit, with the
//! per-iteration trace written as CSV.

use mmreg::estimators::{fit_quantile, QuantileSpec, RegressionData};
use mmreg::mmengine::MMOptions;
use mmreg::simdata::{default_truth_beta, gen_design, gen_quantile_response, Noise, SimSpec};

fn main() -> mmreg::Result<()> {
    let x = gen_design(&SimSpec::new(5000, 30, 2))?;
    let y = gen_quantile_response(&x, &default_truth_beta(30), 0.3, Noise::Gaussian { sd: 1.0 }, 2)?;
    let data = RegressionData::with_intercept_column(x, y)?;
    let spec = QuantileSpec::new(0.3, 0.05)?;
    let trace = std::env::temp_dir().join("mmreg_acceleration_trace.csv");

    let base = MMOptions::default().with_tol(1e-12).with_max_iter(100_000);
    let plain = fit_quantile(&data, spec, &base)?;
    let fast = fit_quantile(&data, spec, &MMOptions { trace_path: Some(trace.clone()), ..base.accelerated(true) })?;
    println!("plain MM:    {:>6} iterations, objective {:.12}", plain.iterations, plain.objective);
    println!(
        "accelerated: {:>6} iterations, objective {:.12}, {} restarts",
        fast.iterations, fast.objective, fast.restarts
    );
    println!("trace written to {}", trace.display());
    Ok(())
}
