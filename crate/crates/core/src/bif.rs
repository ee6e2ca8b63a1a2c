//! Bouligand influence of each fold's empirical distribution on the
//! full-data learner.
//!
//! Column `i` of `B` solves `H·B_i = rhs_i` with
//!
//! ```text
//! H     = (1/l)·K·F + 2γ_A I + 2γ_I/(l+u)²·K·L
//! rhs_i = -K_{·,Sᵢ} μᵢ/mᵢ - 2γ_A f - 2γ_I/(mᵢ+nᵢ)²·K_{·,Sᵢ} Lᵢ f_{Sᵢ}
//! ```
//!
//! where `F` holds `ℓ''` at the labeled points, `μᵢ` holds `ℓ'` at the
//! fold's labeled points and `Lᵢ` is the Laplacian of the graph over the
//! fold alone. `B_i` is the derivative of the fitted vector along the
//! mixture `(1-ε)·P_S + ε·P_{Sᵢ}` at `ε = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cv::FoldPartition;
use crate::data::SemiDataset;
use crate::error::{Error, Result};
use crate::graph::{sub_laplacian, GraphLaplacian};
use crate::kernels::KernelMatrix;
use crate::linalg::{factorize, solve, sparse_left_mul};
use crate::lowrank::{build_t_inverse, nystrom_sample, WoodburySolver};
use crate::trainers::FittedModel;

/// Diagonals of the curvature terms, each of length `l+u`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureParts {
    /// `ℓ''(y_j, f_j)` on labeled points, 0 elsewhere.
    pub f_diag: DVector<f64>,
    /// 1 on labeled points.
    pub j_mask: DVector<f64>,
    /// 1 where `f_diag` is nonzero; for the smoothed hinge these are the
    /// margins inside the closed band.
    pub sv_mask: DVector<f64>,
    pub n_sv: usize,
}

pub fn build_curvature(m: &FittedModel, d: &SemiDataset) -> Result<CurvatureParts> {
    let n = d.n_points();
    check_model(m, d)?;
    let mut f_diag = DVector::zeros(n);
    for j in 0..d.l {
        f_diag[j] = m.loss.d2(d.labels[j], m.fitted[j])?;
    }
    let j_mask = DVector::from_fn(n, |i, _| if i < d.l { 1.0 } else { 0.0 });
    let sv_mask = f_diag.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let n_sv = sv_mask.iter().filter(|&&v| v != 0.0).count();
    Ok(CurvatureParts {
        f_diag,
        j_mask,
        sv_mask,
        n_sv,
    })
}

fn check_model(m: &FittedModel, d: &SemiDataset) -> Result<()> {
    if m.fitted.len() != d.n_points() {
        return Err(Error::invalid(format!(
            "model fitted on {} points, dataset has {}",
            m.fitted.len(),
            d.n_points()
        )));
    }
    Ok(())
}

/// `ℓ'` of the full-data model at the fold's labeled points, zero padded with
/// one entry per unlabeled fold point.
pub fn build_mu_fold(
    m: &FittedModel,
    d: &SemiDataset,
    labeled_fold: &[usize],
    n_unlabeled: usize,
) -> Result<DVector<f64>> {
    check_model(m, d)?;
    let mut mu = DVector::zeros(labeled_fold.len() + n_unlabeled);
    for (r, &j) in labeled_fold.iter().enumerate() {
        if j >= d.l {
            return Err(Error::invalid(format!("row {j} is not labeled")));
        }
        mu[r] = m.loss.d1(d.labels[j], m.fitted[j])?;
    }
    Ok(mu)
}

/// `K·L`, using the sparsity of `L`.
fn kernel_times_laplacian(k: &DMatrix<f64>, lap: &DMatrix<f64>) -> DMatrix<f64> {
    sparse_left_mul(lap, k).transpose()
}

/// Dense curvature matrix `H`.
pub fn assemble_h(
    k: &KernelMatrix,
    lap: &GraphLaplacian,
    parts: &CurvatureParts,
    d: &SemiDataset,
    gamma_a: f64,
    gamma_i: f64,
) -> Result<DMatrix<f64>> {
    let n = d.n_points();
    if k.dim() != n || lap.dim() != n || parts.f_diag.len() != n {
        return Err(Error::invalid("curvature operands do not match the dataset"));
    }
    let lf = d.l as f64;
    let mut h = if gamma_i > 0.0 {
        kernel_times_laplacian(&k.entries, &lap.laplacian) * (2.0 * gamma_i / (n as f64).powi(2))
    } else {
        DMatrix::zeros(n, n)
    };
    for j in 0..n {
        let f = parts.f_diag[j];
        if f != 0.0 {
            let c = f / lf;
            let mut col = h.column_mut(j);
            col.axpy(c, &k.entries.column(j), 1.0);
        }
    }
    for i in 0..n {
        h[(i, i)] += 2.0 * gamma_a;
    }
    Ok(h)
}

/// Which solver produces `H⁻¹·rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Nystrom { c: usize, seed: u64 },
}

/// The solver that actually ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverPath {
    Exact,
    Nystrom { c: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifMatrix {
    /// `(l+u) × t`, column `i` for fold `i`.
    pub columns: DMatrix<f64>,
    pub t: usize,
    pub path: SolverPath,
    /// Set when the Nyström path failed numerically and the exact solve ran
    /// instead.
    pub fell_back: bool,
}

fn fold_rhs(
    m: &FittedModel,
    d: &SemiDataset,
    part: &FoldPartition,
    k: &KernelMatrix,
) -> Result<DMatrix<f64>> {
    let hp = &m.hyper;
    let n = d.n_points();
    let mut rhs = DMatrix::zeros(n, part.t);
    for i in 0..part.t {
        let lab = &part.labeled_folds[i];
        let unl = &part.unlabeled_folds[i];
        let mi = lab.len();
        if mi == 0 {
            return Err(Error::invalid(format!("fold {i} has no labeled points")).in_fold(i));
        }
        let fold: Vec<usize> = lab.iter().chain(unl).copied().collect();
        let mu = build_mu_fold(m, d, lab, unl.len()).map_err(|e| e.in_fold(i))?;
        let mut col = &m.fitted * (-2.0 * hp.gamma_a);
        for (r, &j) in lab.iter().enumerate() {
            col.axpy(-mu[r] / mi as f64, &k.entries.column(j), 1.0);
        }
        if hp.gamma_i > 0.0 {
            let li = sub_laplacian(&d.points, &fold, hp.k, hp.sigma_w).map_err(|e| e.in_fold(i))?;
            let f_fold = DVector::from_iterator(fold.len(), fold.iter().map(|&j| m.fitted[j]));
            let lf = &li.laplacian * f_fold;
            let c = -2.0 * hp.gamma_i / (fold.len() as f64).powi(2);
            for (r, &j) in fold.iter().enumerate() {
                if lf[r] != 0.0 {
                    col.axpy(c * lf[r], &k.entries.column(j), 1.0);
                }
            }
        }
        rhs.set_column(i, &col);
    }
    Ok(rhs)
}

fn exact_solve(
    k: &KernelMatrix,
    lap: &GraphLaplacian,
    parts: &CurvatureParts,
    d: &SemiDataset,
    m: &FittedModel,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let h = assemble_h(k, lap, parts, d, m.hyper.gamma_a, m.hyper.gamma_i)?;
    let lu = factorize(h, "curvature matrix H")?;
    solve(&lu, rhs, "curvature matrix H")
}

fn nystrom_solve(
    k: &KernelMatrix,
    lap: &GraphLaplacian,
    parts: &CurvatureParts,
    d: &SemiDataset,
    m: &FittedModel,
    rhs: &DMatrix<f64>,
    c: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = d.n_points();
    let tinv = build_t_inverse(k, parts, d.l, m.hyper.gamma_a)?;
    let factors = nystrom_sample(k, c, seed)?;
    let solver = WoodburySolver::new(
        tinv,
        &factors,
        &lap.laplacian,
        m.hyper.gamma_i,
        1.0 / (n as f64).powi(2),
    )?;
    solver.solve(rhs)
}

/// Influence matrix of every fold of `part` on the model `m` trained on all
/// of `d` with kernel `k` and graph `lap`.
pub fn bif_matrix(
    m: &FittedModel,
    d: &SemiDataset,
    part: &FoldPartition,
    k: &KernelMatrix,
    lap: &GraphLaplacian,
    solver: SolverKind,
) -> Result<BifMatrix> {
    check_model(m, d)?;
    if part.labeled_folds.iter().flatten().any(|&j| j >= d.l)
        || part.unlabeled_folds.iter().flatten().any(|&j| j < d.l || j >= d.n_points())
    {
        return Err(Error::invalid("partition does not match the dataset"));
    }
    let parts = build_curvature(m, d)?;
    let rhs = fold_rhs(m, d, part, k)?;
    let (columns, path, fell_back) = match solver {
        SolverKind::Exact => (exact_solve(k, lap, &parts, d, m, &rhs)?, SolverPath::Exact, false),
        SolverKind::Nystrom { c, seed } => {
            if c == 0 || c > d.n_points() {
                return Err(Error::invalid(format!(
                    "Nyström rank {c} outside 1..={}",
                    d.n_points()
                )));
            }
            match nystrom_solve(k, lap, &parts, d, m, &rhs, c, seed) {
                Ok(b) => (b, SolverPath::Nystrom { c }, false),
                Err(Error::Numerical(_)) => {
                    (exact_solve(k, lap, &parts, d, m, &rhs)?, SolverPath::Exact, true)
                }
                Err(e) => return Err(e),
            }
        }
    };
    Ok(BifMatrix {
        columns,
        t: part.t,
        path,
        fell_back,
    })
}

/// Approximate leave-fold-out predictors on all points,
/// `fitted + B_i / (1 - t)` per column.
pub fn fold_predictor_correction(b: &BifMatrix, m: &FittedModel, t: usize) -> Result<DMatrix<f64>> {
    if t < 2 {
        return Err(Error::invalid(format!("fold count {t} must be at least 2")));
    }
    if b.columns.nrows() != m.fitted.len() {
        return Err(Error::invalid("influence matrix does not match the model"));
    }
    let step = 1.0 / (1.0 - t as f64);
    let mut out = &b.columns * step;
    for mut col in out.column_iter_mut() {
        col += &m.fitted;
    }
    Ok(out)
}
