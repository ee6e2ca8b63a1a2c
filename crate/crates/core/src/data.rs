//! LIBSVM ingestion, attribute normalization and the train/test and
//! labeled/unlabeled splits used by every experiment.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

/// Fully labeled examples as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    /// One row per example.
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub task: Task,
}

impl RawDataset {
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>, task: Task) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if task == Task::Classification && !targets.iter().all(|&y| is_sign_label(y)) {
            return Err(Error::invalid("classification targets must be +1 or -1"));
        }
        Ok(Self {
            features,
            targets,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Reinterprets the targets under another task, validating labels.
    pub fn with_task(self, task: Task) -> Result<Self> {
        RawDataset::new(self.features, self.targets, task)
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> RawDataset {
        RawDataset {
            features: self.features.select_rows(rows),
            targets: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.targets[r])),
            task: self.task,
        }
    }

    /// Pads or keeps the feature width so two datasets read from separate
    /// files share a column count.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim < self.dim() {
            return Err(Error::invalid(format!(
                "cannot shrink {} columns to {dim}",
                self.dim()
            )));
        }
        self.features = self.features.resize_horizontally(dim, 0.0);
        Ok(self)
    }

    /// Stacks `other` below `self`.
    pub fn concat(&self, other: &RawDataset) -> Result<RawDataset> {
        let dim = self.dim().max(other.dim());
        let a = self.clone().with_dim(dim)?;
        let b = other.clone().with_dim(dim)?;
        let n = a.len() + b.len();
        let mut features = DMatrix::zeros(n, dim);
        features.rows_mut(0, a.len()).copy_from(&a.features);
        features.rows_mut(a.len(), b.len()).copy_from(&b.features);
        let targets = DVector::from_iterator(n, a.targets.iter().chain(b.targets.iter()).copied());
        let task = if a.task == b.task {
            a.task
        } else {
            Task::Regression
        };
        RawDataset::new(features, targets, task)
    }
}

pub(crate) fn is_sign_label(y: f64) -> bool {
    y == 1.0 || y == -1.0
}

/// Points of T = L ∪ U with the labeled rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDataset {
    pub points: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub l: usize,
    pub u: usize,
}

impl SemiDataset {
    pub fn new(points: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        let l = labels.len();
        if l == 0 {
            return Err(Error::invalid("at least one labeled example is required"));
        }
        if points.nrows() < l {
            return Err(Error::invalid(format!(
                "{} points cannot hold {l} labeled rows",
                points.nrows()
            )));
        }
        let u = points.nrows() - l;
        Ok(Self {
            points,
            labels,
            l,
            u,
        })
    }

    pub fn n_points(&self) -> usize {
        self.l + self.u
    }

    /// Labels padded with zeros for the unlabeled rows.
    pub fn padded_labels(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_points());
        y.rows_mut(0, self.l).copy_from(&self.labels);
        y
    }

    /// Sub-problem made of the given labeled rows (indices `< l`) and
    /// unlabeled rows (indices `>= l`), keeping the labeled-first layout.
    pub fn subset(&self, labeled: &[usize], unlabeled: &[usize]) -> Result<SemiDataset> {
        if let Some(&bad) = labeled.iter().find(|&&i| i >= self.l) {
            return Err(Error::invalid(format!("row {bad} is not labeled")));
        }
        if let Some(&bad) = unlabeled
            .iter()
            .find(|&&i| i < self.l || i >= self.n_points())
        {
            return Err(Error::invalid(format!("row {bad} is not an unlabeled row")));
        }
        let rows: Vec<usize> = labeled.iter().chain(unlabeled).copied().collect();
        let labels = DVector::from_iterator(labeled.len(), labeled.iter().map(|&i| self.labels[i]));
        SemiDataset::new(self.points.select_rows(&rows), labels)
    }
}

/// Parses LIBSVM text (`<target> <index>:<value> ...`, 1-based indices).
///
/// The task is inferred: classification when every target is ±1.
pub fn parse_libsvm(text: &str) -> Result<RawDataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut targets = Vec::new();
    let mut dim = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut tokens = line.split_whitespace();
        let target_tok = tokens.next().expect("nonempty line has a token");
        let target: f64 = target_tok
            .parse()
            .map_err(|_| err(format!("target `{target_tok}` is not a number")))?;
        if !target.is_finite() {
            return Err(err(format!("target `{target_tok}` is not finite")));
        }

        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("`{tok}` is not an index:value pair")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| err(format!("index `{idx_s}` is not a positive integer")))?;
            if idx == 0 {
                return Err(err("indices are 1-based".to_string()));
            }
            if idx <= last {
                return Err(err(format!("index {idx} does not increase after {last}")));
            }
            let val: f64 = val_s
                .parse()
                .map_err(|_| err(format!("value `{val_s}` is not a number")))?;
            if !val.is_finite() {
                return Err(err(format!("value `{val_s}` is not finite")));
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        dim = dim.max(last);
        rows.push(entries);
        targets.push(target);
    }

    let mut features = DMatrix::zeros(rows.len(), dim);
    for (r, entries) in rows.iter().enumerate() {
        for &(c, v) in entries {
            features[(r, c)] = v;
        }
    }
    let task = if targets.iter().all(|&y| is_sign_label(y)) {
        Task::Classification
    } else {
        Task::Regression
    };
    RawDataset::new(features, DVector::from_vec(targets), task)
}

pub fn read_libsvm(path: impl AsRef<Path>) -> Result<RawDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_libsvm(&text)
}

/// Writes a dataset back out in LIBSVM form, omitting zero entries.
pub fn to_libsvm(d: &RawDataset) -> String {
    let mut out = String::new();
    for r in 0..d.len() {
        let _ = write!(out, "{}", d.targets[r]);
        for c in 0..d.dim() {
            let v = d.features[(r, c)];
            if v != 0.0 {
                let _ = write!(out, " {}:{}", c + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

/// Zero-mean, unit (population) variance per attribute; constant
/// attributes become all zeros.
pub fn normalize(d: &RawDataset) -> RawDataset {
    let n = d.len();
    let mut features = d.features.clone();
    if n == 0 {
        return d.clone();
    }
    for mut col in features.column_iter_mut() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std <= 1e-14 * mean.abs().max(1.0) {
            col.fill(0.0);
        } else {
            col.apply(|v| *v = (*v - mean) / std);
        }
    }
    RawDataset {
        features,
        targets: d.targets.clone(),
        task: d.task,
    }
}

fn sized_fraction(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Random split into `⌊fraction·N⌋` training rows and the rest; each side
/// keeps the original row order.
pub fn split_train_test(
    d: &RawDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(RawDataset, RawDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n = d.len();
    let n_train = sized_fraction(train_fraction, n);
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "splitting {n} rows at {train_fraction} leaves one side empty"
        )));
    }
    let idx = shuffled(n, seed);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.select_rows(&train), d.select_rows(&test)))
}

/// Keeps labels on a random `⌊fraction·N⌋` (at least one) subset and places
/// those rows first.
pub fn mask_labels(train: &RawDataset, labeled_fraction: f64, seed: u64) -> Result<SemiDataset> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "labeled fraction {labeled_fraction} must lie in (0, 1]"
        )));
    }
    let n = train.len();
    let l = sized_fraction(labeled_fraction, n).max(1);
    if n == 0 {
        return Err(Error::invalid("no rows to label"));
    }
    let idx = shuffled(n, seed);
    let mut labeled = idx[..l].to_vec();
    let mut unlabeled = idx[l..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    let rows: Vec<usize> = labeled.iter().chain(&unlabeled).copied().collect();
    let labels = DVector::from_iterator(l, labeled.iter().map(|&i| train.targets[i]));
    SemiDataset::new(train.features.select_rows(&rows), labels)
}
