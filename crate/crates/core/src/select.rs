//! Grid search over hyperparameters and the paired t-test used to compare
//! two selection criteria.

use std::cmp::Ordering;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bif::SolverKind;
use crate::cv::{approx_tbif, exact_tcv, partition_folds};
use crate::data::{RawDataset, SemiDataset};
use crate::error::{Error, Result};
use crate::losses::{LossKind, ValidationKind};
use crate::trainers::{fit, predict, Hyperparams, DEFAULT_H};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub sigmas: Vec<f64>,
    pub gamma_as: Vec<f64>,
    pub gamma_is: Vec<f64>,
    pub ks: Vec<usize>,
    pub sigma_ws: Vec<f64>,
}

fn powers(base: f64, exps: impl Iterator<Item = i32>) -> Vec<f64> {
    exps.map(|e| base.powi(e)).collect()
}

impl Grid {
    /// Full grid: 11·9·9·3·5 points.
    pub fn paper() -> Self {
        Self {
            sigmas: powers(2.0, (-10..=10).step_by(2)),
            gamma_as: powers(10.0, -6..=2),
            gamma_is: powers(10.0, -6..=2),
            ks: vec![2, 4, 8],
            sigma_ws: powers(2.0, (-4..=4).step_by(2)),
        }
    }

    /// 3·3·2 points for desk-scale runs.
    pub fn demo() -> Self {
        Self {
            sigmas: powers(2.0, [-2, 0, 2].into_iter()),
            gamma_as: powers(10.0, [-4, -2, 0].into_iter()),
            gamma_is: powers(10.0, [-2, 0].into_iter()),
            ks: vec![4],
            sigma_ws: vec![1.0],
        }
    }

    pub fn from_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let g: Grid = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("grid file {}: {e}", path.display())))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [
            ("sigmas", &self.sigmas),
            ("gamma_as", &self.gamma_as),
            ("gamma_is", &self.gamma_is),
            ("sigma_ws", &self.sigma_ws),
        ] {
            if axis.is_empty() {
                return Err(Error::invalid(format!("grid axis {name} is empty")));
            }
            if axis.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid(format!("grid axis {name} has a non-positive value")));
            }
        }
        if self.ks.is_empty() || self.ks.iter().any(|&k| k < 2) {
            return Err(Error::invalid("grid axis ks must be nonempty with k >= 2"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sigmas.len() * self.gamma_as.len() * self.gamma_is.len() * self.ks.len() * self.sigma_ws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product, `sigma_ws` varying fastest.
    pub fn points(&self, h: f64) -> Vec<Hyperparams> {
        let mut out = Vec::with_capacity(self.len());
        for &sigma in &self.sigmas {
            for &ga in &self.gamma_as {
                for &gi in &self.gamma_is {
                    for &k in &self.ks {
                        for &sw in &self.sigma_ws {
                            out.push(Hyperparams::new(sigma, ga, gi, k, sw).with_h(h));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "snake_case")]
pub enum Criterion {
    ExactTcv,
    ApproxTbif { solver: SolverKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub hyper: Hyperparams,
    /// `None` when evaluation failed.
    pub criterion: Option<f64>,
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub best: Hyperparams,
    pub best_criterion: f64,
    pub table: Vec<GridEntry>,
    pub method: Criterion,
}

/// Orders by criterion, then prefers larger γ_A, larger γ_I, smaller σ,
/// smaller k, smaller σ_w.
fn selection_order(a: (f64, &Hyperparams), b: (f64, &Hyperparams)) -> Ordering {
    let (ca, ha) = a;
    let (cb, hb) = b;
    ca.total_cmp(&cb)
        .then(hb.gamma_a.total_cmp(&ha.gamma_a))
        .then(hb.gamma_i.total_cmp(&ha.gamma_i))
        .then(ha.sigma.total_cmp(&hb.sigma))
        .then(ha.k.cmp(&hb.k))
        .then(ha.sigma_w.total_cmp(&hb.sigma_w))
}

/// Argmin over successful entries.
pub fn select_best(table: &[GridEntry]) -> Result<(Hyperparams, f64)> {
    table
        .iter()
        .filter_map(|e| e.criterion.map(|c| (c, &e.hyper)))
        .min_by(|a, b| selection_order(*a, *b))
        .map(|(c, h)| (*h, c))
        .ok_or_else(|| Error::Selection("every grid point failed".into()))
}

/// Evaluates `criterion` at every grid point against one shared partition.
/// The loss's own `h` is used for the smoothed hinge.
pub fn grid_search(
    d: &SemiDataset,
    grid: &Grid,
    criterion: Criterion,
    loss: LossKind,
    v: ValidationKind,
    t: usize,
    seed: u64,
) -> Result<SelectionResult> {
    grid.validate()?;
    let part = partition_folds(d, t, seed)?;
    let h = match loss {
        LossKind::Huber { h } => h,
        _ => DEFAULT_H,
    };
    let table: Vec<GridEntry> = grid
        .points(h)
        .into_iter()
        .map(|hp| {
            let start = Instant::now();
            let report = match criterion {
                Criterion::ExactTcv => exact_tcv(d, &hp, loss, v, &part),
                Criterion::ApproxTbif { solver } => approx_tbif(d, &hp, loss, v, &part, solver),
            };
            let wall_time = start.elapsed().as_secs_f64();
            match report {
                Ok(r) if r.criterion_value.is_finite() => GridEntry {
                    hyper: hp,
                    criterion: Some(r.criterion_value),
                    wall_time,
                    error: None,
                },
                Ok(r) => GridEntry {
                    hyper: hp,
                    criterion: None,
                    wall_time,
                    error: Some(format!("non-finite criterion {}", r.criterion_value)),
                },
                Err(e) => GridEntry {
                    hyper: hp,
                    criterion: None,
                    wall_time,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let (best, best_criterion) = select_best(&table)?;
    Ok(SelectionResult {
        best,
        best_criterion,
        table,
        method: criterion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// `d̄ / (S_d/√N)` with `d = b - a`; `None` when `S_d` vanishes.
    pub statistic: Option<f64>,
    pub threshold: f64,
    pub significant: bool,
    pub degenerate: bool,
    pub n: usize,
}

/// One-sided 95% critical value of Student's t with `df` degrees of freedom.
pub fn critical_value(df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::invalid("t-test needs at least two pairs"));
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::invalid(format!("Student t with {df} dof: {e}")))?;
    Ok(dist.inverse_cdf(0.95))
}

/// Paired t-test of `b` against `a` at the one-sided 95% level (1.699 for 30
/// pairs).
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 {
        return Err(Error::invalid("t-test needs at least two pairs"));
    }
    paired_ttest_with_threshold(a, b, critical_value(a.len() - 1)?)
}

pub fn paired_ttest_with_threshold(a: &[f64], b: &[f64], threshold: f64) -> Result<TTest> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::invalid(format!("paired samples of lengths {n} and {}", b.len())));
    }
    if n < 2 {
        return Err(Error::invalid("t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    // differences equal up to rounding count as zero spread
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if sd <= 1e-12 * scale || sd == 0.0 {
        return Ok(TTest {
            statistic: None,
            threshold,
            significant: false,
            degenerate: true,
            n,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        statistic: Some(t),
        threshold,
        significant: t > threshold,
        degenerate: false,
        n,
    })
}

/// Trains on all of `train` and returns the mean validation loss on `test`.
pub fn evaluate_test_error(
    best: &Hyperparams,
    train: &SemiDataset,
    test: &RawDataset,
    loss: LossKind,
    v: ValidationKind,
) -> Result<f64> {
    if test.dim() != train.points.ncols() {
        return Err(Error::invalid(format!(
            "test set has {} features, training set {}",
            test.dim(),
            train.points.ncols()
        )));
    }
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let m = fit(train, best, loss)?;
    let pred = predict(&m, &test.features, &train.points)?;
    let mut s = 0.0;
    for (y, p) in test.targets.iter().zip(pred.iter()) {
        s += v.value(*y, *p)?;
    }
    Ok(s / test.len() as f64)
}
