//! Shared fixtures and loop-level oracles for the integration tests.
//!
//! The oracles rebuild every value function from scalar kernel evaluations,
//! a textbook Gaussian elimination and explicit sums over training matches,
//! so they share no matrix code with the library.
#![allow(dead_code)]

use nalgebra::DMatrix;
use prefshap::kernel::{k_full, k_sub};
use prefshap::models::TrainPair;
use prefshap::{CoalitionMask, FeatureKind, KernelParams, ModelKind, PreferenceModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize) -> KernelParams {
    KernelParams::new(
        (0..d).map(|_| rng.random_range(0.5..1.5)).collect(),
        rng.random_range(0.5..2.0),
        vec![FeatureKind::Continuous; d],
    )
    .unwrap()
}

/// Random model with `n` items, `m` training pairs and, for C-GPM, `n_ctx`
/// context rows of dimension `dc`.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    kind: ModelKind,
    n: usize,
    m: usize,
    d: usize,
    n_ctx: usize,
    dc: usize,
) -> PreferenceModel {
    let items = random_matrix(rng, n, d);
    let params = random_params(rng, d);
    let (ctx, cp) = if kind == ModelKind::Cgpm {
        (Some(random_matrix(rng, n_ctx, dc)), Some(random_params(rng, dc)))
    } else {
        (None, None)
    };
    let pairs = (0..m)
        .map(|_| {
            let left = rng.random_range(0..n);
            let mut right = rng.random_range(0..n);
            while right == left {
                right = rng.random_range(0..n);
            }
            TrainPair {
                left,
                right,
                context: ctx.as_ref().map(|_| rng.random_range(0..n_ctx)),
            }
        })
        .collect();
    let alpha = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    PreferenceModel::from_parts(kind, alpha, pairs, items, params, ctx, cp, 1e-3).unwrap()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    x
}

fn unit(params: &KernelParams) -> KernelParams {
    params.with_signal_variance(1.0).unwrap()
}

/// Embedding term `k_S(P_i, q) · μ̂_{S^c | S = q}(P_i)` for every population
/// row `P_i`, where the population rows carry sample weights `w` (one per
/// sample, possibly repeated rows) and the conditioning system has diagonal
/// shift `shift`.
pub fn embedding_terms(
    population: &[Vec<f64>],
    samples: &[usize],
    coalition: &CoalitionMask,
    q: &[f64],
    params: &KernelParams,
    shift: f64,
) -> Vec<f64> {
    let u = unit(params);
    let s2 = params.signal_variance();
    let comp = coalition.complement();
    let m = samples.len();
    if coalition.is_full() {
        return population.iter().map(|p| k_full(p, q, params).unwrap()).collect();
    }
    if coalition.is_empty() {
        return population
            .iter()
            .map(|p| s2 * samples.iter().map(|&t| k_full(p, &population[t], &u).unwrap()).sum::<f64>() / m as f64)
            .collect();
    }
    let a: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    k_sub(&population[samples[i]], &population[samples[j]], coalition, &u).unwrap()
                        + if i == j { shift } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let b: Vec<f64> = samples.iter().map(|&t| k_sub(&population[t], q, coalition, &u).unwrap()).collect();
    let beta = gauss_solve(a, b);
    population
        .iter()
        .map(|p| {
            let mut mu = 0.0;
            for (j, &t) in samples.iter().enumerate() {
                mu += k_sub(p, &population[t], &comp, &u).unwrap() * beta[j];
            }
            k_sub(p, q, coalition, &u).unwrap() * s2 * mu
        })
        .collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| row(m, i)).collect()
}

/// Item-feature preferential value, summed match by match.
pub fn item_value_oracle(
    model: &PreferenceModel,
    left: &[f64],
    right: &[f64],
    context: Option<&[f64]>,
    coalition: &CoalitionMask,
    shift: f64,
) -> f64 {
    let pop = rows(model.items());
    let samples: Vec<usize> = (0..pop.len()).collect();
    let al = embedding_terms(&pop, &samples, coalition, left, model.kernel_item(), shift);
    let ar = embedding_terms(&pop, &samples, coalition, right, model.kernel_item(), shift);
    let ctx = model.contexts().map(rows);
    let mut v = 0.0;
    for (p, a) in model.train_pairs().iter().zip(model.alpha()) {
        let w = match (&ctx, context) {
            (Some(c), Some(u)) => k_full(&c[p.context.unwrap()], u, model.kernel_ctx().unwrap()).unwrap(),
            _ => 1.0,
        };
        v += a * w * (al[p.left] * ar[p.right] - ar[p.left] * al[p.right]);
    }
    v
}

/// Context-feature value of a C-GPM with the conditioning system built over
/// all `m` training matches (one row per match, no merging).
pub fn context_value_oracle(
    model: &PreferenceModel,
    u: &[f64],
    left: &[f64],
    right: &[f64],
    coalition: &CoalitionMask,
    shift: f64,
) -> f64 {
    let ctx = rows(model.contexts().unwrap());
    let samples: Vec<usize> = model.train_pairs().iter().map(|p| p.context.unwrap()).collect();
    let w = embedding_terms(&ctx, &samples, coalition, u, model.kernel_ctx().unwrap(), shift);
    let items = rows(model.items());
    let k = |a: &[f64], b: &[f64]| k_full(a, b, model.kernel_item()).unwrap();
    let mut v = 0.0;
    for (p, a) in model.train_pairs().iter().zip(model.alpha()) {
        let (l, r) = (&items[p.left], &items[p.right]);
        let xi = k(l, left) * k(r, right) - k(r, left) * k(l, right);
        v += a * w[p.context.unwrap()] * xi;
    }
    v
}

/// Utility value `Σ_j α_j (A(l_j, x) - A(r_j, x))` of a UPM.
pub fn utility_value_oracle(model: &PreferenceModel, x: &[f64], coalition: &CoalitionMask, shift: f64) -> f64 {
    let pop = rows(model.items());
    let samples: Vec<usize> = (0..pop.len()).collect();
    let a = embedding_terms(&pop, &samples, coalition, x, model.kernel_item(), shift);
    model
        .train_pairs()
        .iter()
        .zip(model.alpha())
        .map(|(p, al)| al * (a[p.left] - a[p.right]))
        .sum()
}

/// `|a - b|` relative to `max(|b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn all_proper(d: usize) -> Vec<CoalitionMask> {
    (1..(1u64 << d) - 1).map(|v| CoalitionMask::from_integer(v, d).unwrap()).collect()
}
