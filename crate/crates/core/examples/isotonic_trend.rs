//! Robust isotonic regression of a noisy monotone series with two spikes,
//! next to pooled adjacent violators.

use mmreg::estimators::{fit_isotonic_l2e, pava, IsotonicConfig};
use mmreg::mmengine::MMOptions;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

fn main() -> mmreg::Result<()> {
    let n = 174;
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.1).expect("valid sd");
    let mut y = DVector::from_fn(n, |i, _| {
        let t = i as f64 / (n - 1) as f64;
        -0.4 + 1.4 * t * t + noise.sample(&mut rng)
    });
    y[60] += 1.0;
    y[130] -= 1.0;

    let fit = fit_isotonic_l2e(&y, &IsotonicConfig::default(), &MMOptions::default())?;
    let ls = pava(&y);
    println!("final penalty {:.3e}, tau {:.2}, largest decrease {:.2e}", fit.lambda_final, fit.tau, fit.max_violation);
    println!("{:>4} {:>8} {:>8} {:>8} {:>8}", "i", "y", "L2E", "PAVA", "-log w");
    for i in [55, 60, 65, 125, 130, 135] {
        println!("{i:>4} {:>8.3} {:>8.3} {:>8.3} {:>8.2}", y[i], fit.beta[i], ls[i], fit.outlyingness[i]);
    }
    Ok(())
}
