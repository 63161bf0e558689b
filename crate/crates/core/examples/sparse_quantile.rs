//! Best-subset quantile regression: proximal distance with annealing and
//! the l0 Moreau envelope, tuned by cross-validation and scored against
//! the truth.

use mmreg::cli::{cv_sparse_quantile, default_grid, selection_metrics, ModelKind, SparseCv};
use mmreg::estimators::{fit_sparse_quantile_l0, fit_sparse_quantile_pd, AnnealSchedule, QuantileSpec, RegressionData};
use mmreg::mmengine::MMOptions;
use mmreg::simdata::{gen_design, gen_quantile_response, sparse_bandwidth, sparse_truth_beta, Noise, SimSpec};

fn main() -> mmreg::Result<()> {
    let (n, p, q, seed) = (500, 50, 0.7, 3);
    let mut spec = SimSpec::new(n, p, seed);
    spec.noise = Noise::Gaussian { sd: 2f64.sqrt() };
    let x = gen_design(&spec)?;
    let truth = sparse_truth_beta(p)?;
    let y = gen_quantile_response(&x, &truth, q, spec.noise, seed)?;
    let data = RegressionData::with_intercept_column(x.clone(), y)?;
    let qs = QuantileSpec::new(q, sparse_bandwidth(n, p, q))?;
    let opts = MMOptions::default();

    let ks = default_grid(ModelKind::SparseQuantilePd, p - 1)?;
    let cv = cv_sparse_quantile(&data, qs, SparseCv::Distance, &ks, 5, seed, 1, &opts)?;
    let k = cv.best_value() as usize;
    let pd = fit_sparse_quantile_pd(&data, qs, k, &AnnealSchedule::default(), &opts)?;
    let m = selection_metrics(&pd.sparse, &truth, &x, true)?;
    println!("distance penalty: k = {k}, support {:?}", pd.support);
    println!(
        "  TPR {:.2} FPR {:.3} EE {:.3} PE {:.2}; {} spectral factorization(s)",
        m.tpr, m.fpr, m.ee, m.pe, pd.fit.factorizations.spectral
    );

    let lambdas = default_grid(ModelKind::SparseQuantileL0, p - 1)?;
    let cv = cv_sparse_quantile(&data, qs, SparseCv::L0 { alpha: qs.mu }, &lambdas, 5, seed, 1, &opts)?;
    let l0 = fit_sparse_quantile_l0(&data, qs, cv.best_value(), qs.mu, &opts)?;
    let m = selection_metrics(&l0.sparse, &truth, &x, true)?;
    println!("l0 envelope: lambda = {:.4}, {} nonzero slopes", cv.best_value(), l0.support.len());
    println!("  TPR {:.2} FPR {:.3} EE {:.3} PE {:.2}", m.tpr, m.fpr, m.ee, m.pe);
    Ok(())
}
