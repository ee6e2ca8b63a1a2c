use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use manifold_cv::cv::{approx_tbif, exact_tcv, partition_folds, CvReport};
use manifold_cv::data::{mask_labels, normalize, read_libsvm, split_train_test, to_libsvm, RawDataset, SemiDataset, Task};
use manifold_cv::select::{evaluate_test_error, grid_search, paired_ttest, Criterion, Grid, SelectionResult};
use manifold_cv::synth;
use manifold_cv::trainers::Hyperparams;
use serde::Serialize;

use crate::config::{load_grid, BenchArgs, CvArgs, Format, GenArgs, GenKind, MethodArg, RunConfig, SelectArgs};
use crate::output::{csv_bytes, emit, json_bytes, stamped, write_atomic, SCHEMA_VERSION};

/// Number of error entries written; the process exits nonzero when positive.
pub type Outcome = usize;

// offsets that keep the RNG streams of one run apart
const PARTITION_STREAM: u64 = 1;
const NYSTROM_STREAM: u64 = 2;
const MASK_STREAM: u64 = 3;
const REP_STRIDE: u64 = 1000;

fn read(path: &Path, task: Option<Task>) -> Result<RawDataset> {
    let d = read_libsvm(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match task {
        Some(t) => d.with_task(t)?,
        None => d,
    })
}

/// Training rows and optional test rows, normalized together.
fn load(data: &Path, test: Option<&Path>, task: Option<Task>) -> Result<(RawDataset, Option<RawDataset>)> {
    let train = read(data, task)?;
    let Some(test_path) = test else {
        return Ok((normalize(&train), None));
    };
    let test = read(test_path, Some(train.task))?;
    let dim = train.dim().max(test.dim());
    let (train, test) = (train.with_dim(dim)?, test.with_dim(dim)?);
    let joint = normalize(&train.concat(&test)?);
    let n = train.len();
    let rows: Vec<usize> = (0..joint.len()).collect();
    Ok((joint.select_rows(&rows[..n]), Some(joint.select_rows(&rows[n..]))))
}

#[derive(Debug, Serialize)]
struct DatasetInfo {
    task: Task,
    labeled: usize,
    unlabeled: usize,
    dim: usize,
}

impl DatasetInfo {
    fn of(d: &SemiDataset, task: Task) -> Self {
        Self {
            task,
            labeled: d.l,
            unlabeled: d.u,
            dim: d.points.ncols(),
        }
    }
}

fn criterion_for(cfg: &RunConfig, method: MethodArg, n_points: usize, seed: u64) -> Criterion {
    match method {
        MethodArg::Exact => Criterion::ExactTcv,
        MethodArg::Bif => Criterion::ApproxTbif {
            solver: cfg.solver_kind(n_points, seed.wrapping_add(NYSTROM_STREAM)),
        },
    }
}

pub fn gen(a: &GenArgs) -> Result<Outcome> {
    if a.n < 2 {
        bail!("--n must be at least 2");
    }
    let d = match a.kind {
        GenKind::Moons => synth::two_moons(a.n, a.noise.unwrap_or(0.1), a.seed),
        GenKind::Circles => synth::circles(a.n, a.noise.unwrap_or(0.05), 0.5, a.seed),
        GenKind::Rkhs => {
            if a.dim == 0 {
                bail!("--dim must be positive");
            }
            synth::rkhs_regression(a.n, a.dim, 0.25, 8, a.noise.unwrap_or(0.1), a.seed)
        }
    };
    write_atomic(&a.out, to_libsvm(&d).as_bytes())?;
    Ok(0)
}

#[derive(Serialize)]
struct CvOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    dataset: DatasetInfo,
    hyperparams: Hyperparams,
    report: CvReport,
}

#[derive(Serialize)]
struct FoldRow {
    schema_version: u32,
    fold: usize,
    labeled: usize,
    loss: f64,
}

pub fn cv(a: &CvArgs) -> Result<Outcome> {
    let mut cfg = RunConfig::new("cv", vec![a.data.clone()], &a.common);
    cfg.validate()?;
    let (raw, _) = load(&a.data, None, cfg.task.map(Into::into))?;
    let d = mask_labels(&raw, cfg.labeled_fraction, cfg.seed)?;
    let (loss, v) = cfg.loss(raw.task);
    let hp = Hyperparams::new(a.sigma, a.gamma_a, a.gamma_i, a.k, a.sigma_w).with_h(cfg.h);
    hp.validate()?;
    let t = cfg.t[0];
    let part = partition_folds(&d, t, cfg.seed.wrapping_add(PARTITION_STREAM))?;
    let report = match criterion_for(&cfg, cfg.method, d.n_points(), cfg.seed) {
        Criterion::ExactTcv => exact_tcv(&d, &hp, loss, v, &part)?,
        Criterion::ApproxTbif { solver } => approx_tbif(&d, &hp, loss, v, &part, solver)?,
    };
    let bytes = match cfg.format {
        Format::Json => json_bytes(&stamped(&CvOutput {
            command: "cv",
            config: &cfg,
            dataset: DatasetInfo::of(&d, raw.task),
            hyperparams: hp,
            report,
        }))?,
        Format::Csv => {
            let rows: Vec<FoldRow> = report
                .per_fold
                .iter()
                .enumerate()
                .map(|(i, &loss)| FoldRow {
                    schema_version: SCHEMA_VERSION,
                    fold: i,
                    labeled: part.labeled_folds[i].len(),
                    loss,
                })
                .collect();
            csv_bytes(&rows)?
        }
    };
    emit(a.common.out.as_deref(), &bytes)?;
    Ok(0)
}

#[derive(Serialize)]
struct GridRow {
    schema_version: u32,
    sigma: f64,
    gamma_a: f64,
    gamma_i: f64,
    k: usize,
    sigma_w: f64,
    h: f64,
    criterion: Option<f64>,
    wall_time: f64,
    status: &'static str,
    error: Option<String>,
}

fn grid_rows(r: &SelectionResult) -> Vec<GridRow> {
    r.table
        .iter()
        .map(|e| GridRow {
            schema_version: SCHEMA_VERSION,
            sigma: e.hyper.sigma,
            gamma_a: e.hyper.gamma_a,
            gamma_i: e.hyper.gamma_i,
            k: e.hyper.k,
            sigma_w: e.hyper.sigma_w,
            h: e.hyper.h,
            criterion: e.criterion,
            wall_time: e.wall_time,
            status: if e.error.is_none() { "ok" } else { "failed" },
            error: e.error.clone(),
        })
        .collect()
}

#[derive(Serialize)]
struct SelectOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    dataset: DatasetInfo,
    method: Criterion,
    best: Hyperparams,
    best_criterion: f64,
    test_error: Option<f64>,
    grid_points: usize,
    failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<&'a [manifold_cv::select::GridEntry]>,
}

pub fn select(a: &SelectArgs) -> Result<Outcome> {
    let mut cfg = RunConfig::new("select", vec![a.data.clone()], &a.common);
    cfg.test = a.test.clone();
    cfg.grid = Some(a.grid.clone());
    cfg.validate()?;
    let grid = load_grid(&a.grid)?;
    let (raw, test) = load(&a.data, a.test.as_deref(), cfg.task.map(Into::into))?;
    let d = mask_labels(&raw, cfg.labeled_fraction, cfg.seed)?;
    let (loss, v) = cfg.loss(raw.task);
    let criterion = criterion_for(&cfg, cfg.method, d.n_points(), cfg.seed);
    let r = grid_search(&d, &grid, criterion, loss, v, cfg.t[0], cfg.seed.wrapping_add(PARTITION_STREAM))?;
    let test_error = match &test {
        Some(test) => Some(evaluate_test_error(&r.best, &d, test, loss, v)?),
        None => None,
    };
    let failed = r.table.iter().filter(|e| e.error.is_some()).count();
    let summary = |table| SelectOutput {
        command: "select",
        config: &cfg,
        dataset: DatasetInfo::of(&d, raw.task),
        method: r.method,
        best: r.best,
        best_criterion: r.best_criterion,
        test_error,
        grid_points: r.table.len(),
        failed,
        table,
    };
    let out = a.common.out.as_deref();
    match cfg.format {
        Format::Json => emit(out, &json_bytes(&stamped(&summary(Some(&r.table))))?)?,
        Format::Csv => {
            emit(out, &csv_bytes(&grid_rows(&r))?)?;
            let path = a
                .summary
                .clone()
                .or_else(|| out.map(|p| p.with_extension("summary.json")));
            if let Some(p) = path {
                write_atomic(&p, &json_bytes(&stamped(&summary(None)))?)?;
            }
        }
    }
    Ok(failed)
}

#[derive(Debug, Serialize)]
struct RepRecord {
    dataset: String,
    t: usize,
    rep: usize,
    seed: u64,
    baseline_error: Option<f64>,
    method_error: Option<f64>,
    baseline_time: Option<f64>,
    method_time: Option<f64>,
    baseline_best: Option<Hyperparams>,
    method_best: Option<Hyperparams>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct BenchRow {
    schema_version: u32,
    dataset: String,
    t: usize,
    reps: usize,
    completed: usize,
    baseline: MethodArg,
    method: MethodArg,
    baseline_error_mean: Option<f64>,
    baseline_error_std: Option<f64>,
    method_error_mean: Option<f64>,
    method_error_std: Option<f64>,
    baseline_time: Option<f64>,
    method_time: Option<f64>,
    speedup: Option<f64>,
    t_statistic: Option<f64>,
    threshold: Option<f64>,
    significant: Option<bool>,
    degenerate: Option<bool>,
    status: &'static str,
    error: Option<String>,
}

#[derive(Serialize)]
struct BenchOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    rows: &'a [BenchRow],
    reps: &'a [RepRecord],
}

fn mean_std(x: &[f64]) -> (Option<f64>, Option<f64>) {
    if x.is_empty() {
        return (None, None);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = if x.len() < 2 {
        0.0
    } else {
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

struct RepResult {
    baseline: (f64, f64, Hyperparams),
    method: (f64, f64, Hyperparams),
}

/// Selects with one criterion and scores the winner on the test split.
fn select_and_test(
    d: &SemiDataset,
    test: &RawDataset,
    grid: &Grid,
    criterion: Criterion,
    task: Task,
    cfg: &RunConfig,
    t: usize,
    seed: u64,
) -> Result<(f64, f64, Hyperparams)> {
    let (loss, v) = cfg.loss(task);
    let start = Instant::now();
    let r = grid_search(d, grid, criterion, loss, v, t, seed.wrapping_add(PARTITION_STREAM))?;
    let time = start.elapsed().as_secs_f64();
    let err = evaluate_test_error(&r.best, d, test, loss, v)?;
    Ok((err, time, r.best))
}

fn run_rep(raw: &RawDataset, grid: &Grid, cfg: &RunConfig, baseline: MethodArg, t: usize, seed: u64) -> Result<RepResult> {
    let (train, test) = split_train_test(raw, cfg.train_fraction, seed)?;
    let d = mask_labels(&train, cfg.labeled_fraction, seed.wrapping_add(MASK_STREAM))?;
    let n = d.n_points();
    let b = select_and_test(&d, &test, grid, criterion_for(cfg, baseline, n, seed), raw.task, cfg, t, seed)
        .context("baseline selection")?;
    let m = select_and_test(&d, &test, grid, criterion_for(cfg, cfg.method, n, seed), raw.task, cfg, t, seed)
        .context("method selection")?;
    Ok(RepResult { baseline: b, method: m })
}

fn dataset_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn bench_row(
    name: &str,
    t: usize,
    cfg: &RunConfig,
    baseline: MethodArg,
    n_reps: usize,
    reps: &[RepRecord],
    error: Option<String>,
) -> BenchRow {
    let done: Vec<&RepRecord> = reps.iter().filter(|r| r.error.is_none()).collect();
    let col = |f: fn(&RepRecord) -> Option<f64>| done.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
    let (be, me) = (col(|r| r.baseline_error), col(|r| r.method_error));
    let (bt, mt) = (mean_std(&col(|r| r.baseline_time)).0, mean_std(&col(|r| r.method_time)).0);
    let (bm, bs) = mean_std(&be);
    let (mm, ms) = mean_std(&me);
    let test = if done.len() >= 2 { paired_ttest(&be, &me).ok() } else { None };
    let failures: Vec<String> = reps
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("rep {}: {e}", r.rep)))
        .chain(error)
        .collect();
    BenchRow {
        schema_version: SCHEMA_VERSION,
        dataset: name.to_string(),
        t,
        reps: n_reps,
        completed: done.len(),
        baseline,
        method: cfg.method,
        baseline_error_mean: bm,
        baseline_error_std: bs,
        method_error_mean: mm,
        method_error_std: ms,
        baseline_time: bt,
        method_time: mt,
        speedup: bt.zip(mt).map(|(b, m)| b / m),
        t_statistic: test.and_then(|x| x.statistic),
        threshold: test.map(|x| x.threshold),
        significant: test.map(|x| x.significant),
        degenerate: test.map(|x| x.degenerate),
        status: match (failures.is_empty(), done.is_empty()) {
            (true, _) => "ok",
            (false, false) => "partial",
            (false, true) => "failed",
        },
        error: (!failures.is_empty()).then(|| failures.join("; ")),
    }
}

pub fn bench(a: &BenchArgs) -> Result<Outcome> {
    let mut cfg = RunConfig::new("bench", a.data.clone(), &a.common);
    cfg.grid = Some(a.grid.clone());
    if let Some(ts) = &a.t_list {
        cfg.t = ts.clone();
    }
    cfg.validate()?;
    if a.reps == 0 {
        bail!("--reps must be positive");
    }
    let grid = load_grid(&a.grid)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for path in &a.data {
        let name = dataset_name(path);
        let raw = match read(path, cfg.task.map(Into::into)).map(|d| normalize(&d)) {
            Ok(r) => r,
            Err(e) => {
                for &t in &cfg.t {
                    rows.push(bench_row(&name, t, &cfg, a.baseline, a.reps, &[], Some(format!("{e:#}"))));
                }
                continue;
            }
        };
        for &t in &cfg.t {
            let mut reps = Vec::with_capacity(a.reps);
            for rep in 0..a.reps {
                let seed = cfg.seed.wrapping_add(REP_STRIDE * rep as u64);
                let mut rec = RepRecord {
                    dataset: name.clone(),
                    t,
                    rep,
                    seed,
                    baseline_error: None,
                    method_error: None,
                    baseline_time: None,
                    method_time: None,
                    baseline_best: None,
                    method_best: None,
                    error: None,
                };
                match run_rep(&raw, &grid, &cfg, a.baseline, t, seed) {
                    Ok(r) => {
                        (rec.baseline_error, rec.baseline_time, rec.baseline_best) =
                            (Some(r.baseline.0), Some(r.baseline.1), Some(r.baseline.2));
                        (rec.method_error, rec.method_time, rec.method_best) =
                            (Some(r.method.0), Some(r.method.1), Some(r.method.2));
                    }
                    Err(e) => rec.error = Some(format!("{e:#}")),
                }
                reps.push(rec);
            }
            rows.push(bench_row(&name, t, &cfg, a.baseline, a.reps, &reps, None));
            records.extend(reps);
        }
    }
    let errors = rows.iter().filter(|r| r.error.is_some()).count();
    let bytes = match cfg.format {
        Format::Json => json_bytes(&stamped(&BenchOutput {
            command: "bench",
            config: &cfg,
            rows: &rows,
            reps: &records,
        }))?,
        Format::Csv => csv_bytes(&rows)?,
    };
    emit(a.common.out.as_deref(), &bytes)?;
    Ok(errors)
}
