//! Nyström approximation of the kernel matrix and a Woodbury solver for the
//! curvature matrix with the kernel in its intrinsic term replaced by the
//! approximation:
//!
//! ```text
//! H̃ = T + s·K̃·L,   T = (1/l)·K·F + 2γ_A I,   s = 2γ_I/(l+u)²
//! ```
//!
//! `T` only couples the points with nonzero curvature, so its inverse costs a
//! dense solve on that block plus a scalar tail.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bif::CurvatureParts;
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::{factorize, solve, sparse_left_mul, Lu};

/// Eigenvalues of `P` below this fraction of the largest are dropped from
/// the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct NystromFactors {
    /// Sampled columns `C`, `(l+u) × c`.
    pub c_cols: DMatrix<f64>,
    /// Intersection block `P`, the rows of `C` at the sampled indices.
    pub p: DMatrix<f64>,
    pub p_pinv: DMatrix<f64>,
    pub sampled_indices: Vec<usize>,
    pub seed: u64,
    /// `G` with `G·Gᵀ = C·P⁺·Cᵀ`; one column per retained eigenvalue.
    factor: DMatrix<f64>,
}

impl NystromFactors {
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Dense `K̃ = C·P⁺·Cᵀ`.
    pub fn approximation(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Samples `c` kernel columns uniformly without replacement.
pub fn nystrom_sample(k: &KernelMatrix, c: usize, seed: u64) -> Result<NystromFactors> {
    let n = k.dim();
    if c == 0 || c > n {
        return Err(Error::invalid(format!("Nyström rank {c} outside 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, c).into_vec();
    idx.sort_unstable();
    let c_cols = k.columns(&idx)?;
    let p = c_cols.select_rows(&idx);

    let eig = SymmetricEigen::new(p.clone());
    let lmax = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..c)
        .filter(|&i| lmax > 0.0 && eig.eigenvalues[i] > PINV_CUTOFF * lmax)
        .collect();
    let mut scaled = DMatrix::zeros(c, keep.len());
    let mut p_pinv = DMatrix::zeros(c, c);
    for (col, &i) in keep.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let lam = eig.eigenvalues[i];
        scaled.column_mut(col).copy_from(&(v / lam.sqrt()));
        p_pinv += v * v.transpose() / lam;
    }
    let factor = &c_cols * scaled;
    Ok(NystromFactors {
        c_cols,
        p,
        p_pinv,
        sampled_indices: idx,
        seed,
        factor,
    })
}

/// Inverse of `T = (1/l)·K·F + 2γ_A I`.
///
/// With `A` the points of nonzero curvature and `R` the rest, `T` is block
/// lower triangular:
///
/// ```text
/// x_A = (2γ_A I + K_AA F_A / l)⁻¹ v_A
/// x_R = (v_R - K_RA F_A x_A / l) / (2γ_A)
/// ```
#[derive(Debug, Clone)]
pub struct BlockTInverse {
    pub active: Vec<usize>,
    pub rest: Vec<usize>,
    /// LU of `2γ_A I + K_AA F_A / l`.
    labeled_block: Option<Lu>,
    /// `K_RA F_A / l`.
    coupling: DMatrix<f64>,
    pub scalar_tail: f64,
    n: usize,
}

impl BlockTInverse {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        Ok(self.apply_matrix(&m)?.column(0).into_owned())
    }

    pub fn apply_matrix(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.n {
            return Err(Error::invalid(format!(
                "vector of length {} for a {}-point operator",
                v.nrows(),
                self.n
            )));
        }
        let mut out = DMatrix::zeros(self.n, v.ncols());
        let xa = match &self.labeled_block {
            Some(lu) => solve(lu, &v.select_rows(&self.active), "T block")?,
            None => DMatrix::zeros(0, v.ncols()),
        };
        let tail = v.select_rows(&self.rest) - &self.coupling * &xa;
        for (r, &i) in self.active.iter().enumerate() {
            out.row_mut(i).copy_from(&xa.row(r));
        }
        for (r, &i) in self.rest.iter().enumerate() {
            out.row_mut(i).copy_from(&(tail.row(r) * self.scalar_tail));
        }
        Ok(out)
    }
}

pub fn build_t_inverse(
    k: &KernelMatrix,
    parts: &CurvatureParts,
    l: usize,
    gamma_a: f64,
) -> Result<BlockTInverse> {
    let n = k.dim();
    if parts.f_diag.len() != n {
        return Err(Error::invalid("curvature does not match the kernel size"));
    }
    if !(gamma_a > 0.0) {
        return Err(Error::invalid("gamma_A must be positive"));
    }
    let lf = l as f64;
    let active: Vec<usize> = (0..n).filter(|&i| parts.f_diag[i] != 0.0).collect();
    let rest: Vec<usize> = (0..n).filter(|&i| parts.f_diag[i] == 0.0).collect();
    let fa: Vec<f64> = active.iter().map(|&i| parts.f_diag[i] / lf).collect();
    let scale_cols = |mut m: DMatrix<f64>| {
        for (c, f) in fa.iter().enumerate() {
            m.column_mut(c).scale_mut(*f);
        }
        m
    };
    let kcols = k.entries.select_columns(&active);
    let labeled_block = if active.is_empty() {
        None
    } else {
        let mut block = scale_cols(kcols.select_rows(&active));
        for i in 0..active.len() {
            block[(i, i)] += 2.0 * gamma_a;
        }
        Some(factorize(block, "T block")?)
    };
    let coupling = scale_cols(kcols.select_rows(&rest));
    Ok(BlockTInverse {
        active,
        rest,
        labeled_block,
        coupling,
        scalar_tail: 1.0 / (2.0 * gamma_a),
        n,
    })
}

/// Dense `T = (1/l)·K·F + 2γ_A I`.
pub fn t_matrix(k: &KernelMatrix, parts: &CurvatureParts, l: usize, gamma_a: f64) -> DMatrix<f64> {
    let n = k.dim();
    let mut t = DMatrix::from_fn(n, n, |i, j| k.entries[(i, j)] * parts.f_diag[j] / l as f64);
    for i in 0..n {
        t[(i, i)] += 2.0 * gamma_a;
    }
    t
}

/// `H̃⁻¹` via the Woodbury identity with `K̃ = G·Gᵀ`:
///
/// ```text
/// H̃⁻¹ = T⁻¹ - s·T⁻¹G (I + s·GᵀL·T⁻¹G)⁻¹ GᵀL·T⁻¹
/// ```
///
/// Setup is `O((l+u)c² + c³)` past `T⁻¹`; each solve is `O((l+u)c)` plus one
/// application of `T⁻¹`.
#[derive(Debug, Clone)]
pub struct WoodburySolver {
    tinv: BlockTInverse,
    s: f64,
    /// `L·G`.
    lg: DMatrix<f64>,
    /// `T⁻¹·G`.
    tinv_g: DMatrix<f64>,
    inner: Option<Lu>,
}

impl WoodburySolver {
    /// `scale` multiplies `2γ_I` in the intrinsic term, normally `1/(l+u)²`.
    pub fn new(
        tinv: BlockTInverse,
        factors: &NystromFactors,
        laplacian: &DMatrix<f64>,
        gamma_i: f64,
        scale: f64,
    ) -> Result<Self> {
        let n = tinv.dim();
        let g = factors.factor();
        if g.nrows() != n || laplacian.shape() != (n, n) {
            return Err(Error::invalid("Woodbury operands have mismatched sizes"));
        }
        let s = 2.0 * gamma_i * scale;
        if s == 0.0 || g.ncols() == 0 {
            return Ok(Self {
                tinv,
                s: 0.0,
                lg: DMatrix::zeros(n, 0),
                tinv_g: DMatrix::zeros(n, 0),
                inner: None,
            });
        }
        let lg = sparse_left_mul(laplacian, g);
        let tinv_g = tinv.apply_matrix(g)?;
        let mut inner = lg.transpose() * &tinv_g * s;
        for i in 0..inner.nrows() {
            inner[(i, i)] += 1.0;
        }
        let inner = Some(factorize(inner, "Woodbury inner system")?);
        Ok(Self {
            tinv,
            s,
            lg,
            tinv_g,
            inner,
        })
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let y = self.tinv.apply_matrix(rhs)?;
        match &self.inner {
            None => Ok(y),
            Some(lu) => {
                let w = solve(lu, &(self.lg.transpose() * &y), "Woodbury inner system")?;
                Ok(y - &self.tinv_g * w * self.s)
            }
        }
    }
}

pub fn woodbury_solve(
    tinv: &BlockTInverse,
    factors: &NystromFactors,
    laplacian: &DMatrix<f64>,
    gamma_i: f64,
    scale: f64,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let solver = WoodburySolver::new(tinv.clone(), factors, laplacian, gamma_i, scale)?;
    let b = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    Ok(solver.solve(&b)?.column(0).into_owned())
}
