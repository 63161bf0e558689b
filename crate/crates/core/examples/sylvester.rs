//! The Sylvester equation X^T X D E + lambda D = C, solved from two
//! eigendecompositions and reused across lambda.

use mmreg::decompose::{bohning_e, sylvester_solve, SylvesterFactors};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> mmreg::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let (n, p, c) = (40, 6, 5);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let gram = x.tr_mul(&x);
    let (e, e_inv) = bohning_e(c)?;
    let rhs = DMatrix::from_fn(p, c - 1, |_, _| rng.random_range(-1.0..1.0));
    let factors = SylvesterFactors::new(&gram, &e_inv)?;
    for lambda in [0.0, 0.1, 1.0, 10.0] {
        let d = sylvester_solve(&factors, lambda, &rhs)?;
        let resid = &gram * &d * &e + &d * lambda - &rhs;
        println!("lambda {lambda:>5}: |D| = {:.4}, relative residual {:.1e}", d.norm(), resid.norm() / rhs.norm());
    }
    Ok(())
}
