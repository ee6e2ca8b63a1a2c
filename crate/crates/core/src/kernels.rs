//! Gaussian kernel `exp(-‖x - x'‖² / (2σ))` and dense kernel matrices.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("kernel width {sigma} must be positive")))
    }
}

pub fn gaussian_kernel(x: &[f64], x2: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if x.len() != x2.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            x2.len()
        )));
    }
    let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (2.0 * sigma)).exp())
}

/// Symmetric Gram matrix of the Gaussian kernel over all points.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub sigma: f64,
}

impl KernelMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Columns at `idx`, copied out of the precomputed matrix.
    pub fn columns(&self, idx: &[usize]) -> Result<DMatrix<f64>> {
        check_indices(idx, self.dim())?;
        Ok(self.entries.select_columns(idx))
    }
}

fn check_indices(idx: &[usize], n: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= n) {
        Some(bad) => Err(Error::invalid(format!("index {bad} out of range for {n} points"))),
        None => Ok(()),
    }
}

fn row_norms(points: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        points.nrows(),
        points.row_iter().map(|r| r.norm_squared()),
    )
}

/// Kernel values between every row of `a` and every row of `b`.
pub fn cross_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let na = row_norms(a);
    let nb = row_norms(b);
    let mut out = a * b.transpose();
    let scale = -1.0 / (2.0 * sigma);
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            let d2 = (na[i] + nb[j] - 2.0 * out[(i, j)]).max(0.0);
            out[(i, j)] = (d2 * scale).exp();
        }
    }
    Ok(out)
}

pub fn kernel_matrix(points: &DMatrix<f64>, sigma: f64) -> Result<KernelMatrix> {
    check_sigma(sigma)?;
    let n = points.nrows();
    if n == 0 {
        return Err(Error::invalid("kernel matrix needs at least one point"));
    }
    let norms = row_norms(points);
    let gram = points * points.transpose();
    let scale = -1.0 / (2.0 * sigma);
    let mut entries = DMatrix::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let d2 = (norms[i] + norms[j] - 2.0 * gram[(i, j)]).max(0.0);
            let v = (d2 * scale).exp();
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(KernelMatrix { entries, sigma })
}

/// `(l+u) × |fold|` block with columns at the fold's points.
pub fn cross_kernel(points: &DMatrix<f64>, fold_indices: &[usize], sigma: f64) -> Result<DMatrix<f64>> {
    check_indices(fold_indices, points.nrows())?;
    kernel_matrix(points, sigma)?.columns(fold_indices)
}

/// One kernel column against all points, used for single-point prediction.
pub fn kernel_row(points: &DMatrix<f64>, x: &RowDVector<f64>, sigma: f64) -> Result<DVector<f64>> {
    let g = cross_gram(points, &DMatrix::from_row_slice(1, x.len(), x.as_slice()), sigma)?;
    Ok(g.column(0).into_owned())
}
