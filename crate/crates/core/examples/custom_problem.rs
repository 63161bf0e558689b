//! A user-defined MM problem run by the generic engine: the geometric
//! median, majorized by a weighted sum of squares at each anchor.

use mmreg::mmengine::{run_mm, MMOptions, MmProblem};
use nalgebra::{DMatrix, DVector};

struct GeometricMedian {
    points: DMatrix<f64>,
}

impl GeometricMedian {
    fn distances(&self, c: &DVector<f64>) -> Vec<f64> {
        self.points.row_iter().map(|r| (r.transpose() - c).norm()).collect()
    }
}

impl MmProblem for GeometricMedian {
    fn objective(&mut self, c: &DVector<f64>) -> f64 {
        self.distances(c).iter().sum()
    }

    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> mmreg::Result<DVector<f64>> {
        let w: Vec<f64> = self.distances(anchor).iter().map(|d| 1.0 / d.max(1e-12)).collect();
        let total: f64 = w.iter().sum();
        let mut c = DVector::zeros(self.points.ncols());
        for (row, wi) in self.points.row_iter().zip(&w) {
            c += row.transpose() * *wi;
        }
        Ok(c / total)
    }
}

fn main() -> mmreg::Result<()> {
    let points = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 10.0, 10.0]);
    let mut problem = GeometricMedian { points };
    let mean = DVector::from_vec(vec![2.4, 2.4]);
    let fit = run_mm(&mut problem, mean, &MMOptions::default().with_tol(1e-12))?;
    println!("geometric median {:.6?} after {} iterations", fit.beta.as_slice(), fit.iterations);
    println!(
        "objective {:.6} -> {:.6}, descent violations {}",
        fit.history[0],
        fit.objective,
        fit.count_descent_violations()
    );
    Ok(())
}
