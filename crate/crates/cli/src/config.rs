use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use manifold_cv::bif::SolverKind;
use manifold_cv::data::Task;
use manifold_cv::losses::{LossKind, ValidationKind};
use manifold_cv::select::Grid;
use serde::Serialize;

pub const THREADS_VAR: &str = "MANIFOLD_CV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "manifold-cv", version, about = "Cross-validation and model selection for Laplacian-regularized kernel machines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset in LIBSVM format.
    Gen(GenArgs),
    /// Evaluate one criterion at one hyperparameter setting.
    Cv(CvArgs),
    /// Grid search with one criterion.
    Select(SelectArgs),
    /// Compare two criteria over repeated splits.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Clf,
    Reg,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Clf => Task::Classification,
            TaskArg::Reg => Task::Regression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Exact,
    Bif,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverArg {
    Dense,
    Nystrom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Moons,
    Circles,
    Rkhs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "moons")]
    pub kind: GenKind,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Noise level; defaults to 0.1 (moons, rkhs) or 0.05 (circles).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Input dimension for `rkhs`.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by every command that reads data.
#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub t: usize,
    #[arg(long = "labeled-frac", default_value_t = 0.10)]
    pub labeled_fraction: f64,
    #[arg(long = "train-frac", default_value_t = 0.70)]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value = "bif")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "nystrom")]
    pub solver: SolverArg,
    /// Nyström rank; defaults to ⌈√(l+u)⌉.
    #[arg(long)]
    pub c: Option<usize>,
    /// Smoothed-hinge width.
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long = "gamma-a", default_value_t = 1e-2)]
    pub gamma_a: f64,
    #[arg(long = "gamma-i", default_value_t = 1e-2)]
    pub gamma_i: f64,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long = "sigma-w", default_value_t = 1.0)]
    pub sigma_w: f64,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out file scored with the selected model.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    /// `demo`, `paper` or a JSON grid file.
    #[arg(long, default_value = "demo")]
    pub grid: String,
    /// Where the JSON summary goes when `--format csv`; defaults to the
    /// output path with a `.summary.json` extension.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset files, one benchmark row per dataset and fold count.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "demo")]
    pub grid: String,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Fold counts to benchmark.
    #[arg(long = "t-list", value_delimiter = ',', num_args = 1..)]
    pub t_list: Option<Vec<usize>>,
    /// Criterion the `--method` criterion is compared against.
    #[arg(long, value_enum, default_value = "exact")]
    pub baseline: MethodArg,
}

/// Echoed into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub data: Vec<PathBuf>,
    pub test: Option<PathBuf>,
    pub task: Option<TaskArg>,
    pub t: Vec<usize>,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub train_fraction: f64,
    pub method: MethodArg,
    pub solver: SolverArg,
    pub c: Option<usize>,
    pub h: f64,
    pub grid: Option<String>,
    pub format: Format,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(command: &'static str, data: Vec<PathBuf>, common: &CommonArgs) -> Self {
        Self {
            command,
            data,
            test: None,
            task: common.task,
            t: vec![common.t],
            seed: common.seed,
            labeled_fraction: common.labeled_fraction,
            train_fraction: common.train_fraction,
            method: common.method,
            solver: common.solver,
            c: common.c,
            h: common.h,
            grid: None,
            format: common.format,
            threads: None,
        }
    }

    pub fn validate(&mut self) -> Result<()> {
        self.threads = threads_from_env()?;
        if self.t.is_empty() || self.t.iter().any(|&t| t < 2) {
            bail!("fold counts must be at least 2, got {:?}", self.t);
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            bail!("--labeled-frac {} must lie in (0, 1]", self.labeled_fraction);
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("--train-frac {} must lie in (0, 1)", self.train_fraction);
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            bail!("--h {} must be positive", self.h);
        }
        if self.c == Some(0) {
            bail!("--c must be positive");
        }
        // bench reports unreadable datasets per row instead
        let data = if self.command == "bench" { &[][..] } else { &self.data[..] };
        for p in data.iter().chain(&self.test) {
            if !p.is_file() {
                bail!("cannot read data file {}", p.display());
            }
        }
        Ok(())
    }

    pub fn loss(&self, task: Task) -> (LossKind, ValidationKind) {
        match task {
            Task::Classification => (LossKind::Huber { h: self.h }, ValidationKind::ZeroOne),
            Task::Regression => (LossKind::Square, ValidationKind::Square),
        }
    }

    pub fn solver_kind(&self, n_points: usize, seed: u64) -> SolverKind {
        match self.solver {
            SolverArg::Dense => SolverKind::Exact,
            SolverArg::Nystrom => SolverKind::Nystrom {
                c: self.c.unwrap_or_else(|| default_rank(n_points)).min(n_points),
                seed,
            },
        }
    }
}

pub fn default_rank(n_points: usize) -> usize {
    (n_points as f64).sqrt().ceil() as usize
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_VAR}={v:?} is not a thread count"))?;
            if n == 0 {
                bail!("{THREADS_VAR} must be at least 1");
            }
            Ok(Some(n))
        }
    }
}

pub fn load_grid(spec: &str) -> Result<Grid> {
    Ok(match spec {
        "demo" => Grid::demo(),
        "paper" => Grid::paper(),
        path => Grid::from_json(path.as_ref()).with_context(|| format!("loading grid {path}"))?,
    })
}
