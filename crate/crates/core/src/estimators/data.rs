use nalgebra::{DMatrix, DVector};

use crate::error::{MmError, Result};

/// Design matrix and response.
///
/// When `intercept` is set the first column is all ones and is left out of
/// every sparsity and rank penalty.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub intercept: bool,
}

fn check_finite(name: &str, it: impl IntoIterator<Item = f64>) -> Result<()> {
    if it.into_iter().any(|v| !v.is_finite()) {
        return Err(MmError::input(format!("{name} contains NaN or infinite entries")));
    }
    Ok(())
}

impl RegressionData {
    /// Uses `x` as given, with no intercept column.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::build(x, y, false)
    }

    /// `x` must already carry a leading column of ones.
    pub fn with_intercept_column(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.ncols() == 0 || x.column(0).iter().any(|&v| v != 1.0) {
            return Err(MmError::input("first column must be all ones for an intercept"));
        }
        Self::build(x, y, true)
    }

    /// Prepends a column of ones to `x`.
    pub fn add_intercept(x: &DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        let x1 = x.clone().insert_column(0, 1.0);
        debug_assert_eq!(x1.nrows(), n);
        Self::build(x1, y, true)
    }

    fn build(x: DMatrix<f64>, y: DVector<f64>, intercept: bool) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(MmError::input(format!("design has {} rows but response has {}", x.nrows(), y.len())));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(MmError::input("empty design matrix"));
        }
        check_finite("design", x.iter().copied())?;
        check_finite("response", y.iter().copied())?;
        Ok(Self { x, y, intercept })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Index of the first penalized coefficient.
    pub fn first_penalized(&self) -> usize {
        usize::from(self.intercept)
    }

    /// Rows selected by `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let x = self.x.select_rows(idx);
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        Self { x, y, intercept: self.intercept }
    }

    /// Responses must be 0 or 1.
    pub fn check_binary(&self) -> Result<()> {
        if let Some(v) = self.y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(MmError::input(format!("binary response expected, found {v}")));
        }
        Ok(())
    }
}

/// Design plus categorical response coded `0..c`, with `c - 1` the reference.
#[derive(Debug, Clone)]
pub struct MultinomialData {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub c: usize,
    pub intercept: bool,
}

impl MultinomialData {
    pub fn new(x: DMatrix<f64>, labels: Vec<usize>, c: usize, intercept: bool) -> Result<Self> {
        if c < 2 {
            return Err(MmError::input(format!("need at least two categories, got {c}")));
        }
        if x.nrows() != labels.len() {
            return Err(MmError::input(format!("design has {} rows but {} labels", x.nrows(), labels.len())));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(MmError::input("empty design matrix"));
        }
        check_finite("design", x.iter().copied())?;
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(MmError::input(format!("label {bad} out of range for {c} categories")));
        }
        if intercept && x.column(0).iter().any(|&v| v != 1.0) {
            return Err(MmError::input("first column must be all ones for an intercept"));
        }
        Ok(Self { x, labels, c, intercept })
    }

    /// From 0/1 responses, with category 1 first so that the logit of the
    /// single free column is the usual log odds of `y = 1`.
    pub fn from_binary(data: &RegressionData) -> Result<Self> {
        data.check_binary()?;
        let labels = data.y.iter().map(|&v| if v == 1.0 { 0 } else { 1 }).collect();
        Self::new(data.x.clone(), labels, 2, data.intercept)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `n x (c - 1)` one-hot matrix; reference rows are all zero.
    pub fn indicators(&self) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n(), self.c - 1);
        for (i, &l) in self.labels.iter().enumerate() {
            if l + 1 < self.c {
                y[(i, l)] = 1.0;
            }
        }
        y
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            c: self.c,
            intercept: self.intercept,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_and_mismatch() {
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(RegressionData::new(x.clone(), DVector::from_vec(vec![1.0, f64::NAN])).is_err());
        assert!(RegressionData::new(x.clone(), DVector::from_vec(vec![1.0])).is_err());
        assert!(RegressionData::with_intercept_column(x, DVector::from_vec(vec![1.0, 2.0])).is_ok());
    }

    #[test]
    fn indicators_drop_reference() {
        let d = MultinomialData::new(DMatrix::from_element(3, 1, 1.0), vec![0, 2, 1], 3, true).unwrap();
        let y = d.indicators();
        assert_eq!(y, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert!(MultinomialData::new(DMatrix::from_element(1, 1, 1.0), vec![3], 3, false).is_err());
    }
}
