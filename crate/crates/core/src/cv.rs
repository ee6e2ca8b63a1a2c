//! Fold partitions and the two cross-validation criteria.
//!
//! Exact t-CV retrains on `S∖Sᵢ` for every fold. t-BIF trains once and
//! replaces each retrain by the first-order correction
//! `fitted + B_i/(1-t)` from [`crate::bif`].

use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bif::{bif_matrix, fold_predictor_correction, SolverKind, SolverPath};
use crate::data::SemiDataset;
use crate::error::{Error, Result};
use crate::losses::{LossKind, ValidationKind};
use crate::trainers::{fit, fit_with, predict, FittedModel, Hyperparams, TrainingContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPartition {
    pub t: usize,
    /// Row indices into the labeled block, sorted within each fold.
    pub labeled_folds: Vec<Vec<usize>>,
    /// Row indices into the unlabeled block (all `>= l`), sorted.
    pub unlabeled_folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPartition {
    /// Labeled then unlabeled rows of fold `i`.
    pub fn fold_rows(&self, i: usize) -> Vec<usize> {
        self.labeled_folds[i]
            .iter()
            .chain(&self.unlabeled_folds[i])
            .copied()
            .collect()
    }

    /// Labeled and unlabeled rows outside fold `i`.
    pub fn complement(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let gather = |folds: &[Vec<usize>]| {
            let mut rows: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            rows.sort_unstable();
            rows
        };
        (gather(&self.labeled_folds), gather(&self.unlabeled_folds))
    }
}

fn deal(mut rows: Vec<usize>, t: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    rows.shuffle(rng);
    let mut folds = vec![Vec::new(); t];
    for (pos, r) in rows.into_iter().enumerate() {
        folds[pos % t].push(r);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Random equipartition of the labeled and of the unlabeled rows into `t`
/// folds whose sizes differ by at most one.
pub fn partition_folds(d: &SemiDataset, t: usize, seed: u64) -> Result<FoldPartition> {
    if t < 2 || t > d.l {
        return Err(Error::invalid(format!(
            "fold count {t} must lie in 2..={}",
            d.l
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labeled_folds = deal((0..d.l).collect(), t, &mut rng);
    let unlabeled_folds = deal((d.l..d.n_points()).collect(), t, &mut rng);
    Ok(FoldPartition {
        t,
        labeled_folds,
        unlabeled_folds,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CvMethod {
    Exact,
    Bif { solver: SolverPath, fell_back: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Summed validation loss over all labeled points.
    pub criterion_value: f64,
    pub per_fold: Vec<f64>,
    /// Seconds, including training.
    pub wall_time: f64,
    pub method: CvMethod,
}

fn check_partition(d: &SemiDataset, part: &FoldPartition) -> Result<()> {
    let mut seen = vec![false; d.n_points()];
    if part.labeled_folds.len() != part.t || part.unlabeled_folds.len() != part.t {
        return Err(Error::invalid("partition does not have t folds"));
    }
    for (folds, lo, hi) in [
        (&part.labeled_folds, 0, d.l),
        (&part.unlabeled_folds, d.l, d.n_points()),
    ] {
        for &r in folds.iter().flatten() {
            if r < lo || r >= hi || seen[r] {
                return Err(Error::invalid(format!("partition row {r} is invalid or repeated")));
            }
            seen[r] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("partition does not cover the dataset"));
    }
    Ok(())
}

/// Training set `S∖Sᵢ` with the graph to be rebuilt over its own points.
pub fn leave_fold_out(d: &SemiDataset, part: &FoldPartition, i: usize) -> Result<SemiDataset> {
    let (lab, unl) = part.complement(i);
    d.subset(&lab, &unl)
}

/// Model trained on `S∖Sᵢ` together with the dataset it was trained on.
pub fn retrain_fold(
    d: &SemiDataset,
    hp: &Hyperparams,
    loss: LossKind,
    part: &FoldPartition,
    i: usize,
) -> Result<(FittedModel, SemiDataset)> {
    let sub = leave_fold_out(d, part, i).map_err(|e| e.in_fold(i))?;
    let m = fit(&sub, hp, loss).map_err(|e| e.in_fold(i))?;
    Ok((m, sub))
}

fn validation_sum(
    v: ValidationKind,
    d: &SemiDataset,
    rows: &[usize],
    pred: impl Fn(usize, usize) -> f64,
) -> Result<f64> {
    let mut s = 0.0;
    for (r, &j) in rows.iter().enumerate() {
        s += v.value(d.labels[j], pred(r, j))?;
    }
    Ok(s)
}

pub fn exact_tcv(
    d: &SemiDataset,
    hp: &Hyperparams,
    loss: LossKind,
    v: ValidationKind,
    part: &FoldPartition,
) -> Result<CvReport> {
    let start = Instant::now();
    check_partition(d, part)?;
    let mut per_fold = Vec::with_capacity(part.t);
    for i in 0..part.t {
        let (m, sub) = retrain_fold(d, hp, loss, part, i)?;
        let rows = &part.labeled_folds[i];
        let pred = predict(&m, &d.points.select_rows(rows), &sub.points).map_err(|e| e.in_fold(i))?;
        per_fold.push(validation_sum(v, d, rows, |r, _| pred[r]).map_err(|e| e.in_fold(i))?);
    }
    Ok(CvReport {
        criterion_value: per_fold.iter().sum(),
        per_fold,
        wall_time: start.elapsed().as_secs_f64(),
        method: CvMethod::Exact,
    })
}

pub fn approx_tbif(
    d: &SemiDataset,
    hp: &Hyperparams,
    loss: LossKind,
    v: ValidationKind,
    part: &FoldPartition,
    solver: SolverKind,
) -> Result<CvReport> {
    let start = Instant::now();
    check_partition(d, part)?;
    if !loss.is_differentiable() {
        return Err(Error::UnsupportedLoss("t-BIF needs a twice-differentiable loss".into()));
    }
    let ctx = TrainingContext::build(d, hp)?;
    let m = fit_with(d, hp, loss, &ctx)?;
    let b = bif_matrix(&m, d, part, &ctx.kernel, &ctx.graph, solver)?;
    let corrected = fold_predictor_correction(&b, &m, part.t)?;
    let mut per_fold = Vec::with_capacity(part.t);
    for i in 0..part.t {
        let col = corrected.column(i);
        per_fold.push(
            validation_sum(v, d, &part.labeled_folds[i], |_, j| col[j]).map_err(|e| e.in_fold(i))?,
        );
    }
    Ok(CvReport {
        criterion_value: per_fold.iter().sum(),
        per_fold,
        wall_time: start.elapsed().as_secs_f64(),
        method: CvMethod::Bif {
            solver: b.path,
            fell_back: b.fell_back,
        },
    })
}

/// Resubstitution loss of `m` on the labeled rows, summed.
pub fn resubstitution(m: &FittedModel, d: &SemiDataset, v: ValidationKind) -> Result<f64> {
    let rows: Vec<usize> = (0..d.l).collect();
    let f: &DVector<f64> = &m.fitted;
    validation_sum(v, d, &rows, |_, j| f[j])
}
