//! Logistic and multinomial regression with a fixed curvature bound, so
//! one factorization serves every iteration.

use mmreg::estimators::{
    bernoulli_loglik, fit_logistic, fit_multinomial, multinomial_probs, MultinomialData, RegressionData,
};
use mmreg::mmengine::MMOptions;
use mmreg::simdata::{gen_design, gen_glm_response, multinomial_truth, GlmFamily, GlmResponse, SimSpec};
use nalgebra::DMatrix;

fn main() -> mmreg::Result<()> {
    let x = gen_design(&SimSpec::new(1000, 4, 21))?;
    let truth = DMatrix::from_column_slice(4, 1, &[-0.5, 1.0, 0.0, -1.0]);
    let GlmResponse::Binary(y) = gen_glm_response(&x, &truth, GlmFamily::Bernoulli, 21)? else {
        unreachable!("Bernoulli family gives binary responses")
    };
    let data = RegressionData::with_intercept_column(x.clone(), y.clone())?;
    let fit = fit_logistic(&data, &MMOptions::default().with_tol(1e-10))?;
    println!("logistic: beta {:.3?}", fit.beta.as_slice());
    println!(
        "  loglik {:.4}, {} iterations, {} factorization",
        bernoulli_loglik(&x, &y, &fit.beta),
        fit.iterations,
        fit.factorizations.total()
    );

    let c = 4;
    let b = multinomial_truth(4, c, 21)? * 5.0;
    let GlmResponse::Labels(labels) = gen_glm_response(&x, &b, GlmFamily::Multinomial(c), 21)? else {
        unreachable!("multinomial family gives labels")
    };
    let mdata = MultinomialData::new(x.clone(), labels, c, true)?;
    let fit = fit_multinomial(&mdata, &MMOptions::default().with_tol(1e-10))?;
    println!("multinomial: {} iterations, -loglik/n {:.4}", fit.fit.iterations, fit.fit.objective);
    println!("  coefficients (last category is the reference):\n{:.3}", fit.model.b);
    let probs = multinomial_probs(&fit.model, &x.rows(0, 3).into_owned())?;
    println!("  class probabilities for the first three rows:\n{probs:.3}");
    Ok(())
}
