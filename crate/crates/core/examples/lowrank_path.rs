//! Reduced-rank multinomial regression along a penalty path. The two
//! spectral factorizations behind the Sylvester solves are shared by every
//! penalty value.

use mmreg::cli::log_grid;
use mmreg::decompose::factor_tally;
use mmreg::estimators::{fit_lowrank_path, multinomial_loglik, MultinomialData};
use mmreg::mmengine::MMOptions;
use mmreg::simdata::{gen_design, gen_glm_response, lowrank_truth, GlmFamily, GlmResponse, SimSpec};

fn labels(r: GlmResponse) -> Vec<usize> {
    match r {
        GlmResponse::Labels(l) => l,
        GlmResponse::Binary(_) => unreachable!("multinomial family"),
    }
}

fn main() -> mmreg::Result<()> {
    let (p, c) = (10, 5);
    let b = lowrank_truth(p, c, 1, 5)?;
    let xtr = gen_design(&SimSpec::new(2000, p, 5))?;
    let xte = gen_design(&SimSpec::new(2000, p, 1005))?;
    let train =
        MultinomialData::new(xtr.clone(), labels(gen_glm_response(&xtr, &b, GlmFamily::Multinomial(c), 5)?), c, true)?;
    let test = labels(gen_glm_response(&xte, &b, GlmFamily::Multinomial(c), 1005)?);

    let mut lambdas = vec![0.0];
    lambdas.extend(log_grid(1e-4, 1.0, 13));
    let before = factor_tally();
    let path = fit_lowrank_path(&train, &lambdas, 0.01, &MMOptions::default())?;
    println!("{:>10} {:>12} {:>10} {:>6}", "lambda", "test loglik", "sv ratio", "iters");
    for (lambda, fit) in lambdas.iter().zip(&path) {
        let sv = fit.model.b.rows(1, p - 1).into_owned().singular_values();
        let ratio = sv.iter().skip(1).fold(0.0f64, |m, &s| m.max(s)) / sv.max();
        println!(
            "{lambda:>10.2e} {:>12.2} {ratio:>10.4} {:>6}",
            multinomial_loglik(&fit.model, &xte, &test)?,
            fit.fit.iterations
        );
    }
    println!("factorizations for the whole path: {:?}", factor_tally().since(before));
    Ok(())
}
