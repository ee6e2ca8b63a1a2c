//! Synthetic datasets bundled so experiments need no downloads.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{RawDataset, Task};
use crate::kernels::cross_gram;

fn noise(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * scale
}

/// Two interleaved half circles labeled +1 (upper) and -1 (lower).
pub fn two_moons(n: usize, noise_std: f64, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = DMatrix::zeros(n, 2);
    let mut targets = DVector::zeros(n);
    for i in 0..n {
        let theta = rng.random::<f64>() * PI;
        let upper = i % 2 == 0;
        let (x, y) = if upper {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        features[(i, 0)] = x + noise(&mut rng, noise_std);
        features[(i, 1)] = y + noise(&mut rng, noise_std);
        targets[i] = if upper { 1.0 } else { -1.0 };
    }
    RawDataset {
        features,
        targets,
        task: Task::Classification,
    }
}

/// Two concentric rings: the inner one (radius `factor`) is +1.
pub fn circles(n: usize, noise_std: f64, factor: f64, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = DMatrix::zeros(n, 2);
    let mut targets = DVector::zeros(n);
    for i in 0..n {
        let theta = rng.random::<f64>() * 2.0 * PI;
        let inner = i % 2 == 0;
        let r = if inner { factor } else { 1.0 };
        features[(i, 0)] = r * theta.cos() + noise(&mut rng, noise_std);
        features[(i, 1)] = r * theta.sin() + noise(&mut rng, noise_std);
        targets[i] = if inner { 1.0 } else { -1.0 };
    }
    RawDataset {
        features,
        targets,
        task: Task::Classification,
    }
}

/// Targets from a random kernel expansion `Σ c_i κ(x, z_i)` with width
/// `sigma`, plus Gaussian noise. Inputs are uniform on `[-1, 1]^dim`.
pub fn rkhs_regression(
    n: usize,
    dim: usize,
    sigma: f64,
    n_centers: usize,
    noise_std: f64,
    seed: u64,
) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize| DMatrix::from_fn(rows, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let features = uniform(n);
    let centers = uniform(n_centers.max(1));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let coef = DVector::from_fn(centers.nrows(), |_, _| normal.sample(&mut rng));
    let clean = cross_gram(&features, &centers, sigma).expect("valid kernel width") * coef;
    let targets = DVector::from_fn(n, |i, _| clean[i] + noise(&mut rng, noise_std));
    RawDataset {
        features,
        targets,
        task: Task::Regression,
    }
}
