//! kNN affinity graphs and their Laplacians `L = D - W`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    pub laplacian: DMatrix<f64>,
    pub affinity: DMatrix<f64>,
    pub k: usize,
    pub sigma_w: f64,
}

impl GraphLaplacian {
    pub fn dim(&self) -> usize {
        self.laplacian.nrows()
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(points.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Indices of the `k` nearest rows to `query`, self excluded, ties going to
/// the lower index.
fn nearest(points: &DMatrix<f64>, query: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..points.nrows())
        .filter(|&i| i != query)
        .map(|i| (sq_dist(points, query, i), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Symmetric kNN affinity: `W_ij = exp(-‖x_i - x_j‖² / (2σ_w))` when either
/// point is among the other's `k` nearest neighbors.
pub fn knn_affinity(points: &DMatrix<f64>, k: usize, sigma_w: f64) -> Result<DMatrix<f64>> {
    let p = points.nrows();
    if k == 0 {
        return Err(Error::invalid("neighbor count must be positive"));
    }
    if k >= p {
        return Err(Error::invalid(format!(
            "k = {k} needs more than {p} points"
        )));
    }
    if !(sigma_w > 0.0 && sigma_w.is_finite()) {
        return Err(Error::invalid(format!("graph width {sigma_w} must be positive")));
    }
    let mut w = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in nearest(points, j, k) {
            let v = (-sq_dist(points, i, j) / (2.0 * sigma_w)).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

fn laplacian_parts(w: DMatrix<f64>, k: usize, sigma_w: f64) -> Result<GraphLaplacian> {
    let p = w.nrows();
    if w.ncols() != p {
        return Err(Error::invalid("affinity matrix must be square"));
    }
    for i in 0..p {
        if w[(i, i)] != 0.0 {
            return Err(Error::invalid(format!("affinity has nonzero diagonal at {i}")));
        }
        for j in 0..i {
            if w[(i, j)] != w[(j, i)] {
                return Err(Error::invalid(format!("affinity is not symmetric at ({i}, {j})")));
            }
            if w[(i, j)] < 0.0 {
                return Err(Error::invalid(format!("negative affinity at ({i}, {j})")));
            }
        }
    }
    let mut lap = -&w;
    for i in 0..p {
        lap[(i, i)] = w.row(i).sum();
    }
    Ok(GraphLaplacian {
        laplacian: lap,
        affinity: w,
        k,
        sigma_w,
    })
}

/// Laplacian of an arbitrary symmetric affinity matrix. The returned `k` and
/// `sigma_w` are 0 since they are unknown here.
pub fn laplacian(w: &DMatrix<f64>) -> Result<GraphLaplacian> {
    laplacian_parts(w.clone(), 0, 0.0)
}

pub fn knn_laplacian(points: &DMatrix<f64>, k: usize, sigma_w: f64) -> Result<GraphLaplacian> {
    laplacian_parts(knn_affinity(points, k, sigma_w)?, k, sigma_w)
}

/// Laplacian of the kNN graph built over the fold's points alone, in the
/// order given by `fold_indices`.
pub fn sub_laplacian(
    points: &DMatrix<f64>,
    fold_indices: &[usize],
    k: usize,
    sigma_w: f64,
) -> Result<GraphLaplacian> {
    if fold_indices.len() <= k {
        return Err(Error::invalid(format!(
            "fold of {} points is too small for k = {k}",
            fold_indices.len()
        )));
    }
    if let Some(bad) = fold_indices.iter().find(|&&i| i >= points.nrows()) {
        return Err(Error::invalid(format!("fold index {bad} out of range")));
    }
    knn_laplacian(&points.select_rows(fold_indices), k, sigma_w)
}
