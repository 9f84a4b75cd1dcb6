//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use prefshap::models::TrainPair;
use prefshap::{FeatureKind, KernelParams, ModelKind, PreferenceModel, Query};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Well-conditioned SPD matrix `A Aᵀ / n + 0.1 I`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    (&a * a.transpose()) / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// GPM with `n` random items in `d` dimensions, `m` random training pairs and
/// random dual coefficients. Enough to time value functions without training.
pub fn random_gpm(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> PreferenceModel {
    let items = random_matrix(rng, n, d);
    let params = KernelParams::new(vec![1.0; d], 1.0, vec![FeatureKind::Continuous; d]).unwrap();
    let pairs = (0..m)
        .map(|_| {
            let left = rng.random_range(0..n);
            let right = (left + rng.random_range(1..n)) % n;
            TrainPair {
                left,
                right,
                context: None,
            }
        })
        .collect();
    let alpha = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    PreferenceModel::from_parts(ModelKind::Gpm, alpha, pairs, items, params, None, None, 1e-3).unwrap()
}

pub fn random_queries(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Query> {
    (0..count)
        .map(|_| {
            let l = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            Query::pair(l, r)
        })
        .collect()
}
