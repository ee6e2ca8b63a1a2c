//! Manifold-regularized learners fitted over the representer span of all
//! `l+u` points.
//!
//! Every trainer minimizes, over `f = K·α`,
//!
//! ```text
//! Σ_j w_j ℓ(y_j, f_j) + γ_A αᵀKα + γ_I fᵀ M f
//! ```
//!
//! where the unweighted problem uses `w_j = 1/l` on labeled points and
//! `M = L_S / (l+u)²`. The square loss is solved in closed form; the smoothed
//! hinge by damped Newton with backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{is_sign_label, SemiDataset};
use crate::error::{Error, Result};
use crate::graph::{knn_laplacian, GraphLaplacian};
use crate::kernels::{cross_gram, kernel_matrix, KernelMatrix};
use crate::linalg::{factorize, solve, sparse_left_mul};
use crate::losses::LossKind;

/// Default Huber band half-width.
pub const DEFAULT_H: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Kernel width.
    pub sigma: f64,
    /// Ambient (RKHS norm) weight.
    pub gamma_a: f64,
    /// Intrinsic (graph) weight.
    pub gamma_i: f64,
    /// Graph neighbor count.
    pub k: usize,
    /// Graph affinity width.
    pub sigma_w: f64,
    /// Smoothed-hinge band half-width.
    pub h: f64,
}

impl Hyperparams {
    pub fn new(sigma: f64, gamma_a: f64, gamma_i: f64, k: usize, sigma_w: f64) -> Self {
        Self {
            sigma,
            gamma_a,
            gamma_i,
            k,
            sigma_w,
            h: DEFAULT_H,
        }
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be positive")))
            }
        };
        positive(self.sigma, "sigma")?;
        positive(self.gamma_a, "gamma_A")?;
        positive(self.sigma_w, "sigma_w")?;
        positive(self.h, "h")?;
        if !(self.gamma_i >= 0.0 && self.gamma_i.is_finite()) {
            return Err(Error::invalid(format!("gamma_I = {} must be >= 0", self.gamma_i)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    /// Representer coefficients, one per point of T.
    pub alpha: DVector<f64>,
    /// `K·alpha`, the model evaluated on T.
    pub fitted: DVector<f64>,
    pub loss: LossKind,
    pub hyper: Hyperparams,
    /// Newton iterations used; 0 for closed-form fits.
    pub iterations: usize,
}

/// Kernel and graph built once for a dataset and hyperparameter setting.
#[derive(Debug, Clone)]
pub struct TrainingContext {
    pub kernel: KernelMatrix,
    pub graph: GraphLaplacian,
}

impl TrainingContext {
    pub fn build(d: &SemiDataset, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            kernel: kernel_matrix(&d.points, hp.sigma)?,
            graph: knn_laplacian(&d.points, hp.k, hp.sigma_w)?,
        })
    }
}

fn check_dims(d: &SemiDataset, kernel: &DMatrix<f64>, manifold: &DMatrix<f64>) -> Result<()> {
    let n = d.n_points();
    if kernel.shape() != (n, n) || manifold.shape() != (n, n) {
        return Err(Error::invalid(format!(
            "kernel {:?} / manifold {:?} do not match {n} points",
            kernel.shape(),
            manifold.shape()
        )));
    }
    Ok(())
}

/// LapRLS by solving `(J K + γ_A l I + γ_I l/(l+u)² L K) α = J ỹ`.
pub fn train_laprls(d: &SemiDataset, hp: &Hyperparams) -> Result<FittedModel> {
    let ctx = TrainingContext::build(d, hp)?;
    train_laprls_with(d, hp, &ctx.kernel, &ctx.graph)
}

pub fn train_laprls_with(
    d: &SemiDataset,
    hp: &Hyperparams,
    kernel: &KernelMatrix,
    graph: &GraphLaplacian,
) -> Result<FittedModel> {
    hp.validate()?;
    let k = &kernel.entries;
    check_dims(d, k, &graph.laplacian)?;
    let (l, n) = (d.l, d.n_points());
    let lf = l as f64;
    let manifold_scale = hp.gamma_i * lf / (n as f64).powi(2);

    let mut system = if hp.gamma_i > 0.0 {
        sparse_left_mul(&graph.laplacian, k) * manifold_scale
    } else {
        DMatrix::zeros(n, n)
    };
    for i in 0..l {
        let mut row = system.row_mut(i);
        row += k.row(i);
    }
    for i in 0..n {
        system[(i, i)] += hp.gamma_a * lf;
    }
    let lu = factorize(system, "LapRLS system")?;
    let rhs = DMatrix::from_column_slice(n, 1, d.padded_labels().as_slice());
    let alpha = solve(&lu, &rhs, "LapRLS system")?.column(0).into_owned();
    let fitted = k * &alpha;
    Ok(FittedModel {
        alpha,
        fitted,
        loss: LossKind::Square,
        hyper: *hp,
        iterations: 0,
    })
}

/// LapSVM with the hinge replaced by its Huber smoothing (band `hp.h`).
pub fn train_lapsvm(d: &SemiDataset, hp: &Hyperparams, opts: NewtonOptions) -> Result<FittedModel> {
    let ctx = TrainingContext::build(d, hp)?;
    train_lapsvm_with(d, hp, &ctx.kernel, &ctx.graph, opts)
}

pub fn train_lapsvm_with(
    d: &SemiDataset,
    hp: &Hyperparams,
    kernel: &KernelMatrix,
    graph: &GraphLaplacian,
    opts: NewtonOptions,
) -> Result<FittedModel> {
    hp.validate()?;
    if !d.labels.iter().all(|&y| is_sign_label(y)) {
        return Err(Error::invalid("LapSVM needs labels in {+1, -1}"));
    }
    let loss = LossKind::huber(hp.h)?;
    let n = d.n_points();
    let manifold = &graph.laplacian / (n as f64).powi(2);
    let weights = DVector::from_element(d.l, 1.0 / d.l as f64);
    train_weighted_with(d, hp, loss, &weights, &manifold, &kernel.entries, opts)
}

/// Trains under arbitrary per-label weights and a prebuilt manifold operator
/// `M` (already carrying its scale factors).
pub fn train_weighted(
    d: &SemiDataset,
    hp: &Hyperparams,
    loss: LossKind,
    label_weights: &DVector<f64>,
    manifold: &DMatrix<f64>,
    opts: NewtonOptions,
) -> Result<FittedModel> {
    hp.validate()?;
    let kernel = kernel_matrix(&d.points, hp.sigma)?;
    train_weighted_with(d, hp, loss, label_weights, manifold, &kernel.entries, opts)
}

pub fn train_weighted_with(
    d: &SemiDataset,
    hp: &Hyperparams,
    loss: LossKind,
    label_weights: &DVector<f64>,
    manifold: &DMatrix<f64>,
    kernel: &DMatrix<f64>,
    opts: NewtonOptions,
) -> Result<FittedModel> {
    hp.validate()?;
    check_dims(d, kernel, manifold)?;
    if label_weights.len() != d.l {
        return Err(Error::invalid(format!(
            "{} label weights for {} labeled points",
            label_weights.len(),
            d.l
        )));
    }
    if label_weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::invalid("label weights must be nonnegative"));
    }
    let objective = Objective::new(d, hp, loss, label_weights, manifold, kernel);
    let (alpha, iterations) = match loss {
        LossKind::Square => (objective.solve_square()?, 0),
        LossKind::Huber { .. } => objective.newton(opts)?,
        LossKind::Hinge => {
            return Err(Error::UnsupportedLoss(
                "hinge loss cannot be trained directly; use the smoothed hinge".into(),
            ))
        }
    };
    let fitted = kernel * &alpha;
    Ok(FittedModel {
        alpha,
        fitted,
        loss,
        hyper: *hp,
        iterations,
    })
}

/// Weighted objective in representer coordinates.
pub struct Objective<'a> {
    kernel: &'a DMatrix<f64>,
    manifold: &'a DMatrix<f64>,
    manifold_kernel: DMatrix<f64>,
    y: DVector<f64>,
    w: DVector<f64>,
    gamma_a: f64,
    gamma_i: f64,
    loss: LossKind,
}

impl<'a> Objective<'a> {
    pub fn new(
        d: &SemiDataset,
        hp: &Hyperparams,
        loss: LossKind,
        label_weights: &DVector<f64>,
        manifold: &'a DMatrix<f64>,
        kernel: &'a DMatrix<f64>,
    ) -> Self {
        let n = d.n_points();
        let mut w = DVector::zeros(n);
        w.rows_mut(0, d.l).copy_from(label_weights);
        let manifold_kernel = if hp.gamma_i > 0.0 {
            sparse_left_mul(manifold, kernel)
        } else {
            DMatrix::zeros(n, n)
        };
        Self {
            kernel,
            manifold,
            manifold_kernel,
            y: d.padded_labels(),
            w,
            gamma_a: hp.gamma_a,
            gamma_i: hp.gamma_i,
            loss,
        }
    }

    fn labeled(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.w.len()).filter(|&j| self.w[j] != 0.0)
    }

    pub fn value(&self, alpha: &DVector<f64>) -> Result<f64> {
        let f = self.kernel * alpha;
        self.value_at(alpha, &f)
    }

    fn value_at(&self, alpha: &DVector<f64>, f: &DVector<f64>) -> Result<f64> {
        let mut data = 0.0;
        for j in self.labeled() {
            data += self.w[j] * self.loss.value(self.y[j], f[j])?;
        }
        let ambient = self.gamma_a * alpha.dot(f);
        let intrinsic = if self.gamma_i > 0.0 {
            self.gamma_i * f.dot(&(self.manifold * f))
        } else {
            0.0
        };
        Ok(data + ambient + intrinsic)
    }

    /// `r` with gradient `K·r`; `r = 0` is the function-space stationarity
    /// condition.
    fn residual(&self, alpha: &DVector<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
        let mut r = alpha * (2.0 * self.gamma_a);
        if self.gamma_i > 0.0 {
            r += &self.manifold_kernel * alpha * (2.0 * self.gamma_i);
        }
        for j in self.labeled() {
            r[j] += self.w[j] * self.loss.d1(self.y[j], f[j])?;
        }
        Ok(r)
    }

    pub fn gradient(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.kernel * alpha;
        Ok(self.kernel * self.residual(alpha, &f)?)
    }

    /// `diag(w ℓ'') K + 2γ_A I + 2γ_I M K`; the Hessian is `K` times this.
    fn reduced_hessian(&self, f: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = f.len();
        let mut a = if self.gamma_i > 0.0 {
            &self.manifold_kernel * (2.0 * self.gamma_i)
        } else {
            DMatrix::zeros(n, n)
        };
        for j in self.labeled() {
            let c = self.w[j] * self.loss.d2(self.y[j], f[j])?;
            if c != 0.0 {
                let mut row = a.row_mut(j);
                row += self.kernel.row(j) * c;
            }
        }
        for i in 0..n {
            a[(i, i)] += 2.0 * self.gamma_a;
        }
        Ok(a)
    }

    /// Exact minimizer of the objective along `alpha + s·dir`, `s > 0`.
    ///
    /// The directional derivative is piecewise linear and nondecreasing in
    /// `s`, with kinks where a margin crosses `1 ± h`, so the root is found
    /// by bisection over the kinks and interpolation inside one piece.
    fn line_minimizer(
        &self,
        alpha: &DVector<f64>,
        f: &DVector<f64>,
        dir: &DVector<f64>,
        kd: &DVector<f64>,
    ) -> Result<Option<f64>> {
        let mut c0 = 2.0 * self.gamma_a * alpha.dot(kd);
        let mut c1 = 2.0 * self.gamma_a * dir.dot(kd);
        if self.gamma_i > 0.0 {
            let mkd = self.manifold * kd;
            c0 += 2.0 * self.gamma_i * f.dot(&mkd);
            c1 += 2.0 * self.gamma_i * kd.dot(&mkd);
        }
        let labeled: Vec<usize> = self.labeled().filter(|&j| kd[j] != 0.0).collect();
        let deriv = |s: f64| -> Result<f64> {
            let mut v = c0 + s * c1;
            for &j in &labeled {
                v += self.w[j] * self.loss.d1(self.y[j], f[j] + s * kd[j])? * kd[j];
            }
            Ok(v)
        };
        let mut kinks: Vec<f64> = Vec::new();
        if let LossKind::Huber { h } = self.loss {
            for &j in &labeled {
                for edge in [1.0 - h, 1.0 + h] {
                    let s = (edge * self.y[j] - f[j]) / kd[j];
                    if s > 0.0 && s.is_finite() {
                        kinks.push(s);
                    }
                }
            }
        }
        kinks.sort_by(f64::total_cmp);
        let d0 = deriv(0.0)?;
        if !(d0 < 0.0) {
            return Ok(None);
        }
        // first kink with a nonnegative derivative
        let (mut lo, mut hi) = (0usize, kinks.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if deriv(kinks[mid])? >= 0.0 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let left = if lo == 0 { 0.0 } else { kinks[lo - 1] };
        let d_left = deriv(left)?;
        let (right, d_right) = if lo < kinks.len() {
            (kinks[lo], deriv(kinks[lo])?)
        } else {
            // past the last kink the derivative is affine
            (left + 1.0, deriv(left + 1.0)?)
        };
        let rise = d_right - d_left;
        if !(rise > 0.0) {
            return Ok(None);
        }
        let s = left - d_left * (right - left) / rise;
        Ok((s > 0.0 && s.is_finite()).then_some(s))
    }

    fn solve_square(&self) -> Result<DVector<f64>> {
        let zero = DVector::zeros(self.w.len());
        let a = self.reduced_hessian(&zero)?;
        let rhs = self.residual(&zero, &zero)?;
        let lu = factorize(a, "weighted least-squares system")?;
        let b = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        Ok(-solve(&lu, &b, "weighted least-squares system")?.column(0).into_owned())
    }

    fn newton(&self, opts: NewtonOptions) -> Result<(DVector<f64>, usize)> {
        let n = self.w.len();
        let mut alpha = DVector::zeros(n);
        let mut f = DVector::zeros(n);
        let mut value = self.value_at(&alpha, &f)?;
        let mut grad_norm = f64::INFINITY;
        for it in 0..=opts.max_iter {
            let r = self.residual(&alpha, &f)?;
            let g = self.kernel * &r;
            grad_norm = g.norm();
            if grad_norm <= opts.tol * (1.0 + alpha.norm()) {
                return Ok((alpha, it));
            }
            if it == opts.max_iter {
                break;
            }
            let lu = factorize(self.reduced_hessian(&f)?, "Newton system")?;
            let b = DMatrix::from_column_slice(n, 1, r.as_slice());
            let mut dir = -solve(&lu, &b, "Newton system")?.column(0).into_owned();
            let mut slope = g.dot(&dir);
            if !(slope < 0.0) {
                dir = -&r;
                slope = g.dot(&dir);
            }
            let kd = self.kernel * &dir;
            if let Some(step) = self.line_minimizer(&alpha, &f, &dir, &kd)? {
                let trial_alpha = &alpha + &dir * step;
                let trial_f = &f + &kd * step;
                let trial = self.value_at(&trial_alpha, &trial_f)?;
                if trial <= value {
                    alpha = trial_alpha;
                    f = trial_f;
                    value = trial;
                    continue;
                }
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial_alpha = &alpha + &dir * step;
                let trial_f = &f + &kd * step;
                let trial = self.value_at(&trial_alpha, &trial_f)?;
                if trial <= value + 1e-4 * step * slope {
                    alpha = trial_alpha;
                    f = trial_f;
                    value = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // no representable decrease left; stationarity decides
                break;
            }
        }
        let r = self.residual(&alpha, &f)?;
        grad_norm = grad_norm.min((self.kernel * r).norm());
        if grad_norm <= opts.tol * (1.0 + alpha.norm()) {
            return Ok((alpha, opts.max_iter));
        }
        Err(Error::Convergence {
            iterations: opts.max_iter,
            gradient_norm: grad_norm,
        })
    }
}

/// Label weights and manifold operator of the mixture
/// `(1-ε)·P_S + ε·P_{S_i}` for the fold with the given labeled and unlabeled
/// rows. `fold_laplacian` is the Laplacian over `labeled_fold ++
/// unlabeled_fold` in that order.
pub fn mixture_weights(
    d: &SemiDataset,
    full_laplacian: &DMatrix<f64>,
    labeled_fold: &[usize],
    unlabeled_fold: &[usize],
    fold_laplacian: &DMatrix<f64>,
    eps: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = d.n_points();
    let m = labeled_fold.len();
    let fold: Vec<usize> = labeled_fold.iter().chain(unlabeled_fold).copied().collect();
    if m == 0 {
        return Err(Error::invalid("fold has no labeled points"));
    }
    if fold_laplacian.shape() != (fold.len(), fold.len()) {
        return Err(Error::invalid("fold Laplacian does not match the fold size"));
    }
    let mut weights = DVector::from_element(d.l, (1.0 - eps) / d.l as f64);
    for &j in labeled_fold {
        if j >= d.l {
            return Err(Error::invalid(format!("row {j} is not labeled")));
        }
        weights[j] += eps / m as f64;
    }
    // the leave-fold-out step cancels fold weights up to rounding
    let scale = 1.0 / d.l as f64;
    weights.apply(|w| {
        if w.abs() < 1e-12 * scale {
            *w = 0.0;
        }
    });
    let mut manifold = full_laplacian * ((1.0 - eps) / (n as f64).powi(2));
    let fold_scale = eps / (fold.len() as f64).powi(2);
    for (a, &ja) in fold.iter().enumerate() {
        for (b, &jb) in fold.iter().enumerate() {
            manifold[(ja, jb)] += fold_scale * fold_laplacian[(a, b)];
        }
    }
    Ok((weights, manifold))
}

/// `out_i = Σ_j α_j κ(train_j, point_i)`.
pub fn predict(
    m: &FittedModel,
    points: &DMatrix<f64>,
    train_points: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if train_points.nrows() != m.alpha.len() {
        return Err(Error::invalid(format!(
            "{} training points for {} coefficients",
            train_points.nrows(),
            m.alpha.len()
        )));
    }
    if points.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(cross_gram(points, train_points, m.hyper.sigma)? * &m.alpha)
}

/// Trains the learner matching `loss`: square → LapRLS, smoothed hinge →
/// LapSVM (the loss's `h` overrides `hp.h`).
pub fn fit(d: &SemiDataset, hp: &Hyperparams, loss: LossKind) -> Result<FittedModel> {
    let ctx = TrainingContext::build(d, hp)?;
    fit_with(d, hp, loss, &ctx)
}

pub fn fit_with(
    d: &SemiDataset,
    hp: &Hyperparams,
    loss: LossKind,
    ctx: &TrainingContext,
) -> Result<FittedModel> {
    match loss {
        LossKind::Square => train_laprls_with(d, hp, &ctx.kernel, &ctx.graph),
        LossKind::Huber { h } => train_lapsvm_with(
            d,
            &hp.with_h(h),
            &ctx.kernel,
            &ctx.graph,
            NewtonOptions::default(),
        ),
        LossKind::Hinge => Err(Error::UnsupportedLoss(
            "hinge loss cannot be trained directly; use the smoothed hinge".into(),
        )),
    }
}
