//! Cross-module checks against independently computed references.

use std::time::Instant;

use manifold_cv::bif::{assemble_h, bif_matrix, build_curvature, fold_predictor_correction, SolverKind};
use manifold_cv::cv::{approx_tbif, exact_tcv, partition_folds, retrain_fold, FoldPartition};
use manifold_cv::data::{RawDataset, SemiDataset, Task};
use manifold_cv::graph::knn_laplacian;
use manifold_cv::kernels::kernel_matrix;
use manifold_cv::losses::{LossKind, ValidationKind};
use manifold_cv::lowrank::{build_t_inverse, nystrom_sample, WoodburySolver};
use manifold_cv::select::{evaluate_test_error, grid_search, Criterion, Grid};
use manifold_cv::synth;
use manifold_cv::trainers::{fit, fit_with, predict, train_lapsvm, Hyperparams, NewtonOptions, TrainingContext};
use nalgebra::{DMatrix, DVector};

fn moons(l: usize, u: usize, seed: u64) -> SemiDataset {
    let raw = synth::two_moons(l + u, 0.1, seed);
    SemiDataset::new(raw.features, raw.targets.rows(0, l).into_owned()).unwrap()
}

fn huber(h: f64, y: f64, t: f64) -> f64 {
    let m = y * t;
    if m > 1.0 + h {
        0.0
    } else if m >= 1.0 - h {
        (1.0 + h - m).powi(2) / (4.0 * h)
    } else {
        1.0 - m
    }
}

#[test]
fn lapsvm_matches_derivative_free_minimizer() {
    let d = moons(4, 4, 3);
    let hp = Hyperparams::new(0.5, 0.05, 0.5, 2, 0.5).with_h(0.1);
    let m = train_lapsvm(&d, &hp, NewtonOptions::default()).unwrap();
    let k = kernel_matrix(&d.points, hp.sigma).unwrap().entries;
    let lap = knn_laplacian(&d.points, hp.k, hp.sigma_w).unwrap().laplacian;
    let n = 8;
    let objective = |a: &DVector<f64>| {
        let f = &k * a;
        let data: f64 = (0..4).map(|j| huber(hp.h, d.labels[j], f[j])).sum::<f64>() / 4.0;
        data + hp.gamma_a * a.dot(&f) + hp.gamma_i * f.dot(&(&lap * &f)) / (n * n) as f64
    };
    // compass search from the origin
    let mut x = DVector::zeros(n);
    let mut fx = objective(&x);
    let mut step = 1.0;
    while step > 1e-10 {
        let mut moved = false;
        for i in 0..n {
            for s in [step, -step] {
                let mut y = x.clone();
                y[i] += s;
                let fy = objective(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    let fm = objective(&m.alpha);
    assert!(fm <= fx + 1e-12);
    assert!((fm - fx).abs() <= 1e-5 * (1.0 + fx.abs()));
}

#[test]
fn specialized_curvature_matrices() {
    let d = moons(6, 14, 4);
    let n = 20.0f64;
    let hp = Hyperparams::new(0.5, 0.02, 0.7, 3, 0.5);
    let ctx = TrainingContext::build(&d, &hp).unwrap();
    let kl = &ctx.kernel.entries * &ctx.graph.laplacian * (2.0 * hp.gamma_i / (n * n));
    let eye = DMatrix::<f64>::identity(20, 20) * (2.0 * hp.gamma_a);

    let m = fit_with(&d, &hp, LossKind::Square, &ctx).unwrap();
    let parts = build_curvature(&m, &d).unwrap();
    let h = assemble_h(&ctx.kernel, &ctx.graph, &parts, &d, hp.gamma_a, hp.gamma_i).unwrap();
    let j = DMatrix::from_diagonal(&parts.j_mask);
    let rls = &ctx.kernel.entries * j * (2.0 / 6.0) + &eye + &kl;
    assert!((&h - rls).amax() < 1e-14);

    let loss = LossKind::huber(0.2).unwrap();
    let m = fit_with(&d, &hp, loss, &ctx).unwrap();
    let parts = build_curvature(&m, &d).unwrap();
    assert!(parts.n_sv > 0);
    for i in 0..20 {
        assert_eq!(parts.f_diag[i], parts.sv_mask[i] / (2.0 * 0.2));
    }
    let h = assemble_h(&ctx.kernel, &ctx.graph, &parts, &d, hp.gamma_a, hp.gamma_i).unwrap();
    let isv = DMatrix::from_diagonal(&parts.sv_mask);
    let svm = &ctx.kernel.entries * isv / (2.0 * 6.0 * 0.2) + &eye + &kl;
    assert!((&h - svm).amax() < 1e-14);
}

#[test]
fn influence_is_equivariant_under_unlabeled_permutation() {
    let d = moons(8, 24, 5);
    let hp = Hyperparams::new(0.5, 0.02, 0.5, 3, 0.5);
    let part = partition_folds(&d, 4, 1).unwrap();
    let loss = LossKind::Square;
    let ctx = TrainingContext::build(&d, &hp).unwrap();
    let m = fit_with(&d, &hp, loss, &ctx).unwrap();
    let b = bif_matrix(&m, &d, &part, &ctx.kernel, &ctx.graph, SolverKind::Exact).unwrap();

    // reverse the unlabeled block
    let n = d.n_points();
    let perm: Vec<usize> = (0..d.l).chain((d.l..n).rev()).collect();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let pd = SemiDataset::new(d.points.select_rows(&perm), d.labels.clone()).unwrap();
    let pp = FoldPartition {
        unlabeled_folds: part
            .unlabeled_folds
            .iter()
            .map(|f| {
                let mut g: Vec<usize> = f.iter().map(|&j| inv[j]).collect();
                g.sort_unstable();
                g
            })
            .collect(),
        ..part.clone()
    };
    let pctx = TrainingContext::build(&pd, &hp).unwrap();
    let pm = fit_with(&pd, &hp, loss, &pctx).unwrap();
    let pb = bif_matrix(&pm, &pd, &pp, &pctx.kernel, &pctx.graph, SolverKind::Exact).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        for i in 0..4 {
            assert!((pb.columns[(new, i)] - b.columns[(old, i)]).abs() < 1e-9);
        }
    }
}

fn mean_fold_error(d: &SemiDataset, hp: &Hyperparams, t: usize, seed: u64) -> f64 {
    let ctx = TrainingContext::build(d, hp).unwrap();
    let m = fit_with(d, hp, LossKind::Square, &ctx).unwrap();
    let part = partition_folds(d, t, seed).unwrap();
    let b = bif_matrix(&m, d, &part, &ctx.kernel, &ctx.graph, SolverKind::Exact).unwrap();
    let c = fold_predictor_correction(&b, &m, t).unwrap();
    (0..t)
        .map(|i| {
            let (mi, sub) = retrain_fold(d, hp, LossKind::Square, &part, i).unwrap();
            let exact = predict(&mi, &d.points, &sub.points).unwrap();
            (exact - c.column(i)).amax()
        })
        .sum::<f64>()
        / t as f64
}

#[test]
fn fold_predictor_error_shrinks_with_more_folds() {
    let d = moons(20, 40, 6);
    let hp = Hyperparams::new(0.5, 0.05, 0.1, 3, 0.5);
    let e2 = mean_fold_error(&d, &hp, 2, 0);
    let e10 = mean_fold_error(&d, &hp, 10, 0);
    assert!(e10 < e2, "t=10 error {e10} not below t=2 error {e2}");
}

#[test]
fn duplicated_halves_give_equal_fold_losses() {
    let base = moons(5, 10, 7);
    let (l, u) = (base.l, base.u);
    let rows: Vec<usize> = (0..l).chain(0..l).chain(l..l + u).chain(l..l + u).collect();
    let labels = DVector::from_iterator(2 * l, (0..2 * l).map(|j| base.labels[j % l]));
    let d = SemiDataset::new(base.points.select_rows(&rows), labels).unwrap();
    let part = FoldPartition {
        t: 2,
        labeled_folds: vec![(0..l).collect(), (l..2 * l).collect()],
        unlabeled_folds: vec![(2 * l..2 * l + u).collect(), (2 * l + u..2 * (l + u)).collect()],
        seed: 0,
    };
    let hp = Hyperparams::new(0.5, 0.02, 0.3, 3, 0.5);
    for loss in [LossKind::Square, LossKind::huber(0.01).unwrap()] {
        let r = exact_tcv(&d, &hp, loss, ValidationKind::Square, &part).unwrap();
        assert!((r.per_fold[0] - r.per_fold[1]).abs() <= 1e-10 * r.per_fold[0].max(1.0));
    }
}

#[test]
fn interpolating_regime_has_near_zero_cv() {
    let n = 60;
    let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
    let centers = DMatrix::from_column_slice(2, 1, &[0.3, 0.7]);
    let sigma = 0.05;
    let y = manifold_cv::kernels::cross_gram(&x, &centers, sigma).unwrap() * DVector::from_vec(vec![1.0, -0.5]);
    let d = SemiDataset::new(x, y.clone()).unwrap();
    let hp = Hyperparams::new(sigma, 1e-9, 0.0, 2, 1.0);
    let part = partition_folds(&d, 5, 3).unwrap();
    let r = exact_tcv(&d, &hp, LossKind::Square, ValidationKind::Square, &part).unwrap();
    assert!(r.criterion_value < 1e-3 * y.norm_squared(), "{}", r.criterion_value);
}

#[test]
fn bif_tracks_exact_cv_on_a_grid() {
    let d = moons(20, 80, 0);
    let part = partition_folds(&d, 10, 0).unwrap();
    for ga in [0.1, 0.3, 1.0] {
        for s in [0.5, 1.0, 2.0] {
            let hp = Hyperparams::new(s, ga, 0.1, 4, 0.5);
            let e = exact_tcv(&d, &hp, LossKind::Square, ValidationKind::Square, &part).unwrap();
            let b = approx_tbif(&d, &hp, LossKind::Square, ValidationKind::Square, &part, SolverKind::Exact).unwrap();
            let rel = (b.criterion_value - e.criterion_value).abs() / e.criterion_value;
            assert!(rel <= 0.15, "γ_A {ga} σ {s}: relative gap {rel}");
        }
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() - 1) as f64 / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn criteria_rank_the_grid_alike() {
    let d = moons(20, 80, 1);
    let mut grid = Grid::demo();
    grid.gamma_as = vec![1e-2, 1e-1, 1.0];
    grid.gamma_is = vec![0.1];
    let mut total = 0.0;
    for seed in 0..10 {
        let e = grid_search(&d, &grid, Criterion::ExactTcv, LossKind::Square, ValidationKind::Square, 5, seed).unwrap();
        let b = grid_search(
            &d,
            &grid,
            Criterion::ApproxTbif { solver: SolverKind::Exact },
            LossKind::Square,
            ValidationKind::Square,
            5,
            seed,
        )
        .unwrap();
        let ce: Vec<f64> = e.table.iter().map(|x| x.criterion.unwrap()).collect();
        let cb: Vec<f64> = b.table.iter().map(|x| x.criterion.unwrap()).collect();
        total += spearman(&ce, &cb);
    }
    assert!(total / 10.0 >= 0.7, "mean Spearman {}", total / 10.0);
}

#[test]
fn approximate_criterion_is_faster_at_scale() {
    let d = moons(100, 400, 2);
    let hp = Hyperparams::new(0.5, 1e-2, 0.1, 4, 0.5);
    let part = partition_folds(&d, 5, 0).unwrap();
    let e = exact_tcv(&d, &hp, LossKind::Square, ValidationKind::ZeroOne, &part).unwrap();
    let b = approx_tbif(
        &d,
        &hp,
        LossKind::Square,
        ValidationKind::ZeroOne,
        &part,
        SolverKind::Nystrom { c: 23, seed: 0 },
    )
    .unwrap();
    assert!(b.wall_time < e.wall_time, "{} vs {}", b.wall_time, e.wall_time);
}

#[test]
fn singleton_and_duplicated_grids() {
    let d = moons(10, 20, 3);
    let one = Grid {
        sigmas: vec![0.5],
        gamma_as: vec![1e-2],
        gamma_is: vec![0.1],
        ks: vec![3],
        sigma_ws: vec![0.5],
    };
    let r = grid_search(&d, &one, Criterion::ExactTcv, LossKind::Square, ValidationKind::Square, 2, 0).unwrap();
    assert_eq!(r.table.len(), 1);
    assert_eq!(r.best, r.table[0].hyper);

    let dup = Grid {
        sigmas: vec![0.5, 0.5],
        ..one
    };
    let r = grid_search(
        &d,
        &dup,
        Criterion::ApproxTbif { solver: SolverKind::Nystrom { c: 6, seed: 1 } },
        LossKind::Square,
        ValidationKind::Square,
        2,
        0,
    )
    .unwrap();
    assert_eq!(r.table[0].criterion, r.table[1].criterion);
}

#[test]
fn grid_search_records_failures() {
    let d = moons(6, 4, 4);
    let g = Grid {
        sigmas: vec![0.5],
        gamma_as: vec![1e-2],
        gamma_is: vec![0.1],
        ks: vec![2, 8],
        sigma_ws: vec![0.5],
    };
    let r = grid_search(&d, &g, Criterion::ExactTcv, LossKind::Square, ValidationKind::Square, 2, 0).unwrap();
    assert!(r.table[1].criterion.is_none() && r.table[1].error.is_some());
    assert_eq!(r.best.k, 2);
    let bad = Grid { ks: vec![8], ..g };
    assert!(grid_search(&d, &bad, Criterion::ExactTcv, LossKind::Square, ValidationKind::Square, 2, 0).is_err());
}

#[test]
fn recovers_generating_width() {
    let sigmas: Vec<f64> = (-6..=2).step_by(2).map(|e| 2f64.powi(e)).collect();
    let truth = 2;
    let mut hits = 0;
    for seed in 0..10 {
        let raw = synth::rkhs_regression(60, 1, sigmas[truth], 6, 0.05, 40 + seed);
        let d = SemiDataset::new(raw.features, raw.targets).unwrap();
        let g = Grid {
            sigmas: sigmas.clone(),
            gamma_as: vec![1e-4],
            gamma_is: vec![1e-2],
            ks: vec![4],
            sigma_ws: vec![0.1],
        };
        let r = grid_search(&d, &g, Criterion::ExactTcv, LossKind::Square, ValidationKind::Square, 5, seed).unwrap();
        let pos = sigmas.iter().position(|&s| s == r.best.sigma).unwrap();
        if pos.abs_diff(truth) <= 1 {
            hits += 1;
        }
    }
    assert!(hits >= 6, "{hits}/10");
}

#[test]
fn test_error_examples() {
    let d = moons(10, 20, 5);
    let test = synth::two_moons(40, 0.1, 99);
    let hp = Hyperparams::new(0.5, 1e-2, 0.1, 3, 0.5);

    // independent scorer
    let m = fit(&d, &hp, LossKind::Square).unwrap();
    let mut wrong = 0.0;
    for i in 0..40 {
        let mut f = 0.0;
        for j in 0..d.n_points() {
            let d2 = (test.features.row(i) - d.points.row(j)).norm_squared();
            f += m.alpha[j] * (-d2 / (2.0 * hp.sigma)).exp();
        }
        if (f >= 0.0) != (test.targets[i] > 0.0) {
            wrong += 1.0;
        }
    }
    let e = evaluate_test_error(&hp, &d, &test, LossKind::Square, ValidationKind::ZeroOne).unwrap();
    assert!((e - wrong / 40.0).abs() < 1e-12);

    // the zero model predicts +1 everywhere
    let mut zero = d.clone();
    zero.labels.fill(0.0);
    let e = evaluate_test_error(&hp, &zero, &test, LossKind::Square, ValidationKind::ZeroOne).unwrap();
    let neg = test.targets.iter().filter(|&&y| y < 0.0).count() as f64;
    assert_eq!(e, neg / 40.0);

    // labeled training points under a near-interpolating model
    let train = RawDataset::new(
        d.points.rows(0, d.l).into_owned(),
        d.labels.clone(),
        Task::Classification,
    )
    .unwrap();
    let tight = Hyperparams::new(0.1, 1e-8, 0.0, 3, 0.5);
    let e = evaluate_test_error(&tight, &d, &train, LossKind::Square, ValidationKind::Square).unwrap();
    assert!(e < 1e-4);
}

fn setup_time(d: &SemiDataset, hp: &Hyperparams, c: usize) -> f64 {
    let ctx = TrainingContext::build(d, hp).unwrap();
    let m = fit_with(d, hp, LossKind::Square, &ctx).unwrap();
    let parts = build_curvature(&m, d).unwrap();
    let tinv = build_t_inverse(&ctx.kernel, &parts, d.l, hp.gamma_a).unwrap();
    let nf = nystrom_sample(&ctx.kernel, c, 0).unwrap();
    let scale = 1.0 / (d.n_points() as f64).powi(2);
    (0..5)
        .map(|_| {
            let start = Instant::now();
            let w = WoodburySolver::new(tinv.clone(), &nf, &ctx.graph.laplacian, hp.gamma_i, scale).unwrap();
            std::hint::black_box(&w);
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn woodbury_setup_scales_quadratically_in_rank() {
    let d = moons(50, 550, 6);
    let hp = Hyperparams::new(0.5, 1e-2, 0.5, 4, 0.5);
    let small = setup_time(&d, &hp, 100);
    let large = setup_time(&d, &hp, 200);
    assert!(large <= 4.5 * small, "{large} vs {small}");
}
