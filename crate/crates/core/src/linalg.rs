use nalgebra::{DMatrix, Dyn, LU};

use crate::error::{Error, Result};

pub(crate) type Lu = LU<f64, Dyn, Dyn>;

const PIVOT_RATIO: f64 = 1e-14;

fn usable(lu: &Lu) -> bool {
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.amax();
    max.is_finite() && max > 0.0 && diag.iter().all(|p| p.is_finite() && p.abs() > PIVOT_RATIO * max)
}

/// LU factorization with one retry after adding `1e-10·|trace|/n` to the
/// diagonal.
pub(crate) fn factorize(a: DMatrix<f64>, what: &str) -> Result<Lu> {
    let n = a.nrows();
    if n == 0 {
        return Ok(a.lu());
    }
    let lu = a.clone().lu();
    if usable(&lu) {
        return Ok(lu);
    }
    let trace = a.trace().abs();
    let jitter = if trace > 0.0 { 1e-10 * trace / n as f64 } else { 1e-10 };
    let mut shifted = a;
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    let lu = shifted.lu();
    if usable(&lu) {
        Ok(lu)
    } else {
        Err(Error::Numerical(format!("{what} is singular")))
    }
}

pub(crate) fn solve(lu: &Lu, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Numerical(format!("{what} solve failed")))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical(format!("{what} solve produced non-finite values")))
    }
}

/// `a · b` skipping the zero entries of `a`; graph Laplacians have only a
/// few nonzeros per row.
pub(crate) fn sparse_left_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let bt = b.transpose();
    let mut out_t = DMatrix::zeros(b.ncols(), a.nrows());
    for i in 0..a.nrows() {
        let mut dst = out_t.column_mut(i);
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            if v != 0.0 {
                dst.axpy(v, &bt.column(j), 1.0);
            }
        }
    }
    out_t.transpose()
}
