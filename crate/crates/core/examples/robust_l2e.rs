//! L2E regression on data with shifted responses and leverage points,
//! compared with least squares.

use mmreg::decompose::build_cache;
use mmreg::estimators::{fit_l2e, RegressionData};
use mmreg::mmengine::MMOptions;
use mmreg::simdata::{default_truth_beta, gen_design, gen_l2e_response, Contamination, SimSpec};

fn main() -> mmreg::Result<()> {
    let x = gen_design(&SimSpec::new(2000, 20, 8))?;
    let truth = default_truth_beta(20);
    let (y, xc) = gen_l2e_response(&x, &truth, Contamination::default(), 8)?;
    let data = RegressionData::with_intercept_column(xc.clone(), y.clone())?;

    let fit = fit_l2e(&data, &MMOptions::default())?;
    let ols = build_cache(&xc, 0.0, false)?.solve_normal(&xc.tr_mul(&y))?;
    println!("estimation error  L2E {:.4}   OLS {:.4}", (&fit.state.beta - &truth).norm(), (ols - &truth).norm());
    println!("tau = {:.3} after {} iterations", fit.state.tau, fit.fit.iterations);

    let out = fit.state.outlyingness();
    let flagged = out.iter().filter(|&&o| o > 4.5).count();
    println!("{flagged} of {} rows have weight below e^-4.5", out.len());
    let first: f64 = fit.state.weights.rows(0, 200).mean();
    let middle: f64 = fit.state.weights.rows(900, 200).mean();
    let last: f64 = fit.state.weights.rows(1800, 200).mean();
    println!("mean weight: response-shifted rows {first:.3}, clean rows {middle:.3}, leverage rows {last:.3}");
    Ok(())
}
