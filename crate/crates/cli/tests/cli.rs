use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use manifold_cv::cv::{exact_tcv, partition_folds};
use manifold_cv::data::{mask_labels, normalize, read_libsvm};
use manifold_cv::losses::{LossKind, ValidationKind};
use manifold_cv::select::evaluate_test_error;
use manifold_cv::trainers::Hyperparams;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_manifold-cv"));
    c.env_remove("MANIFOLD_CV_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn gen(dir: &TempDir, kind: &str, n: usize, seed: u64) -> PathBuf {
    let p = dir.path().join(format!("{kind}_{n}_{seed}.txt"));
    ok(&["gen", "--kind", kind, "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&p)]);
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn without_wall_time(text: &str) -> String {
    text.lines().filter(|l| !l.contains("wall_time")).collect::<Vec<_>>().join("\n")
}

#[test]
fn cv_is_deterministic_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "moons", 120, 1);
    let outs: Vec<String> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("run{i}.json"));
            ok(&["cv", "--data", s(&data), "--method", "bif", "--t", "10", "--seed", "7", "--out", s(&out)]);
            std::fs::read_to_string(out).unwrap()
        })
        .collect();
    assert!(outs[0].contains("wall_time"));
    assert_eq!(without_wall_time(&outs[0]), without_wall_time(&outs[1]));
}

#[test]
fn methods_carry_distinct_tags() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "moons", 80, 2);
    let mut tags = Vec::new();
    for m in ["exact", "bif"] {
        let out = dir.path().join(format!("{m}.json"));
        ok(&["cv", "--data", s(&data), "--method", m, "--t", "4", "--out", s(&out)]);
        let v = json(&out);
        assert_eq!(v["schema_version"], 1);
        tags.push(v["report"]["method"]["method"].clone());
    }
    assert_eq!(tags[0], "exact");
    assert_eq!(tags[1], "bif");
}

#[test]
fn cv_matches_library_call() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "rkhs", 100, 3);
    let out = dir.path().join("cv.json");
    ok(&[
        "cv", "--data", s(&data), "--method", "exact", "--t", "5", "--seed", "11", "--sigma", "0.25",
        "--gamma-a", "1e-3", "--gamma-i", "0.1", "--k", "5", "--sigma-w", "0.5", "--labeled-frac", "0.3",
        "--out", s(&out),
    ]);
    let cli = json(&out)["report"]["criterion_value"].as_f64().unwrap();

    let raw = normalize(&read_libsvm(&data).unwrap());
    let d = mask_labels(&raw, 0.3, 11).unwrap();
    let part = partition_folds(&d, 5, 12).unwrap();
    let hp = Hyperparams::new(0.25, 1e-3, 0.1, 5, 0.5);
    let lib = exact_tcv(&d, &hp, LossKind::Square, ValidationKind::Square, &part).unwrap();
    assert!((cli - lib.criterion_value).abs() <= 1e-12 * lib.criterion_value.max(1.0));
}

#[test]
fn singleton_grid_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "moons", 60, 4);
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"sigmas":[1.0],"gamma_as":[0.01],"gamma_is":[0.1],"ks":[4],"sigma_ws":[1.0]}"#).unwrap();
    let out = dir.path().join("table.csv");
    ok(&["select", "--data", s(&data), "--grid", s(&grid), "--t", "3", "--format", "csv", "--out", s(&out)]);
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(r.records().count(), 1);
    assert!(dir.path().join("table.summary.json").is_file());
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn best_row_is_the_column_minimum() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "rkhs", 100, 5);
    let out = dir.path().join("table.csv");
    let summary = dir.path().join("summary.json");
    ok(&[
        "select", "--data", s(&data), "--t", "5", "--format", "csv", "--out", s(&out), "--summary", s(&summary),
        "--labeled-frac", "0.3",
    ]);
    let crit: Vec<f64> = column(&out, "criterion").iter().map(|c| c.parse().unwrap()).collect();
    assert_eq!(crit.len(), 18);
    assert!(column(&out, "schema_version").iter().all(|v| v == "1"));
    let min = crit.iter().copied().fold(f64::INFINITY, f64::min);
    let v = json(&summary);
    assert_eq!(v["best_criterion"].as_f64().unwrap(), min);
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn select_reports_test_error() {
    let dir = TempDir::new().unwrap();
    let train = gen(&dir, "moons", 100, 6);
    let test = gen(&dir, "moons", 50, 7);
    let out = dir.path().join("summary.json");
    ok(&["select", "--data", s(&train), "--test", s(&test), "--t", "5", "--solver", "dense", "--out", s(&out)]);
    let v = json(&out);
    let cli = v["test_error"].as_f64().unwrap();
    let best: Hyperparams = serde_json::from_value(v["best"].clone()).unwrap();

    let (a, b) = (read_libsvm(&train).unwrap(), read_libsvm(&test).unwrap());
    let joint = normalize(&a.concat(&b).unwrap());
    let rows: Vec<usize> = (0..150).collect();
    let d = mask_labels(&joint.select_rows(&rows[..100]), 0.1, 0).unwrap();
    let lib = evaluate_test_error(
        &best,
        &d,
        &joint.select_rows(&rows[100..]),
        LossKind::Huber { h: 0.01 },
        ValidationKind::ZeroOne,
    )
    .unwrap();
    assert!((cli - lib).abs() < 1e-12);
}

fn small_grid(dir: &TempDir) -> PathBuf {
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"sigmas":[0.5,2.0],"gamma_as":[0.01],"gamma_is":[0.1],"ks":[4],"sigma_ws":[1.0]}"#)
        .unwrap();
    grid
}

#[test]
fn single_rep_bench_has_finite_speedup() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "moons", 150, 8);
    let grid = small_grid(&dir);
    let out = dir.path().join("bench.csv");
    ok(&[
        "bench", "--data", s(&data), "--reps", "1", "--t-list", "5", "--grid", s(&grid), "--format", "csv",
        "--out", s(&out),
    ]);
    let speedup = column(&out, "speedup");
    assert_eq!(speedup.len(), 1);
    let x: f64 = speedup[0].parse().unwrap();
    assert!(x > 0.0 && x.is_finite());
}

#[test]
fn self_comparison_is_degenerate() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "moons", 150, 9);
    let grid = small_grid(&dir);
    let out = dir.path().join("bench.json");
    ok(&[
        "bench", "--data", s(&data), "--reps", "3", "--t-list", "5", "--grid", s(&grid), "--method", "exact",
        "--baseline", "exact", "--out", s(&out),
    ]);
    let row = &json(&out)["rows"][0];
    assert_eq!(row["degenerate"], true);
    assert_eq!(row["significant"], false);
    assert_eq!(row["completed"], 3);
}

#[test]
fn bench_isolates_dataset_failures() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "moons", 150, 10);
    let grid = small_grid(&dir);
    let missing = dir.path().join("missing.txt");
    let out = dir.path().join("bench.json");
    let res = run(&[
        "bench", "--data", s(&data), s(&missing), "--reps", "1", "--t-list", "5", "--grid", s(&grid), "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["rows"][0]["status"], "ok");
    assert_eq!(v["rows"][1]["status"], "failed");
    assert!(v["rows"][1]["error"].as_str().unwrap().contains("missing"));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1 1:0.5\nnot a line\n").unwrap();
    let res = run(&["cv", "--data", s(&bad)]);
    assert_eq!(res.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&res.stderr).unwrap();
    assert!(err["error"].is_string());

    let data = gen(&dir, "moons", 40, 11);
    assert!(!run(&["cv", "--data", s(&data), "--t", "1"]).status.success());
    assert!(!run(&["cv", "--data", s(&data), "--labeled-frac", "0"]).status.success());
    let res = bin().args(["cv", "--data", s(&data), "--t", "2"]).env("MANIFOLD_CV_THREADS", "zero").output().unwrap();
    assert!(!res.status.success());
    let res = bin().args(["cv", "--data", s(&data), "--t", "2"]).env("MANIFOLD_CV_THREADS", "1").output().unwrap();
    assert!(res.status.success());
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["config"]["threads"], 1);
}

#[test]
fn outputs_are_replaced_whole() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "moons", 60, 12);
    let out = dir.path().join("cv.csv");
    std::fs::write(&out, "stale contents that are longer than the new file will be".repeat(50)).unwrap();
    ok(&["cv", "--data", s(&data), "--t", "3", "--format", "csv", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("schema_version,fold,labeled,loss\n"));
    assert_eq!(text.lines().count(), 4);
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 2);
}
