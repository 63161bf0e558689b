//! Scalar and vector proximal maps with their Moreau envelopes.

use mmreg::prox::*;
use nalgebra::{DMatrix, DVector};

fn main() -> mmreg::Result<()> {
    let mu = 1.0;
    println!("{:>6} {:>9} {:>9} {:>9} {:>11}", "r", "prox|.|", "M|.|", "conv|.|", "prox rho_.7");
    for r in [-2.0, -0.5, 0.0, 0.5, 2.0] {
        println!(
            "{r:>6.2} {:>9.4} {:>9.4} {:>9.4} {:>11.4}",
            prox_abs(r, mu)?,
            moreau_abs(r, mu)?,
            conv_smoothed_abs(r, mu)?,
            prox_check(r, mu, 0.7)?
        );
    }

    let beta = DVector::from_vec(vec![1.6, 0.1, -0.9, 2.4, -0.05]);
    let hard = prox_l0(&beta, 0.5)?;
    println!("l0 prox (mu 0.5): {:?}, envelope {:.4}", hard.point.as_slice(), hard.envelope_value);
    let top2 = project_sparsity(&beta, 2)?;
    println!("best 2-sparse: {:?}, squared distance {:.4}", top2.point.as_slice(), top2.sq_distance);

    let b = DMatrix::from_row_slice(3, 2, &[3.0, 1.0, 1.0, 2.0, 0.0, 0.5]);
    let nuc = prox_nuclear(&b, 1.0)?;
    let r1 = project_rank(&b, 1)?;
    println!("singular values before {:?}", b.singular_values().as_slice());
    println!("after nuclear prox     {:?}", nuc.point.singular_values().as_slice());
    println!("rank-1 projection distance^2 {:.4}", r1.sq_distance);
    Ok(())
}
