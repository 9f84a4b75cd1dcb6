//! Shapley attributions from sampled coalitions.
//!
//! Values are estimated by the constrained weighted least squares of Kernel
//! SHAP: minimise `Σ_S w(S) (ν(S) - ν(∅) - Σ_{j∈S} φ_j)²` subject to
//! `Σ_j φ_j = ν(Ω) - ν(∅)`, with the Shapley kernel weight `w`.
//!
//! Features that are constant across the explained set cannot receive credit.
//! They are kept inside every coalition, receive `φ = 0`, and the game is
//! played over the remaining effective features.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{effective_features, Dataset};
use crate::error::{PrefShapError, Result};
use crate::kernel::CoalitionMask;
use crate::linalg::CholeskyFactor;
use crate::models::{ModelKind, PreferenceModel, Query};
use crate::valuefns::{
    concat_reference, value_concat, value_context, value_items, value_utility, CmeConfig, ValueBatch,
    DEFAULT_CONCAT_REFERENCE,
};
use crate::FORMAT_VERSION;

/// Largest dimension for which [`exact_shapley`] enumerates every coalition.
pub const MAX_EXACT_DIM: usize = 16;

/// Shapley kernel weight `(d-1) / (C(d,s) s (d-s))` of a coalition of size `s`.
///
/// The empty and full coalitions have infinite weight and enter the
/// regression as constraints instead.
pub fn shap_weight(s: usize, d: usize) -> Result<f64> {
    if s == 0 || s >= d {
        return Err(PrefShapError::Input(format!(
            "coalition size {s} of {d} has infinite Shapley kernel weight"
        )));
    }
    Ok((d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Largest feature count for which coalitions are sampled as integers.
pub const MAX_SAMPLING_DIM: usize = 62;

/// Number of proper non-empty coalitions, saturating for large `d`.
fn n_proper(d: usize) -> u64 {
    if d >= 64 {
        u64::MAX
    } else {
        (1u64 << d).saturating_sub(2)
    }
}

/// Default sample size: every coalition when that is at most `max(2048, 20d)`.
pub fn default_n_coalitions(d: usize) -> usize {
    let cap = 2048.max(20 * d) as u64;
    n_proper(d).min(cap) as usize
}

/// `n` distinct coalitions drawn uniformly from the `2^d - 2` proper non-empty
/// ones, in increasing integer order. Asking for all of them enumerates.
pub fn sample_coalitions<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Vec<CoalitionMask>> {
    if d > MAX_SAMPLING_DIM {
        return Err(PrefShapError::Capacity(format!(
            "coalition sampling supports at most {MAX_SAMPLING_DIM} features, got {d}"
        )));
    }
    let total = n_proper(d);
    if n as u64 > total {
        return Err(PrefShapError::Capacity(format!(
            "{n} coalitions requested but only {total} proper coalitions exist for {d} features"
        )));
    }
    let picked: Vec<u64> = if n as u64 == total {
        (1..=total).collect()
    } else {
        let mut v: Vec<u64> = sample(rng, total as usize, n).into_iter().map(|i| i as u64 + 1).collect();
        v.sort_unstable();
        v
    };
    picked.into_iter().map(|v| CoalitionMask::from_integer(v, d)).collect()
}

/// Sampled coalitions with their Shapley kernel weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CoalitionBatch {
    coalitions: Vec<CoalitionMask>,
    weights: Vec<f64>,
    d_eff: usize,
}

impl CoalitionBatch {
    /// Rejects duplicate, empty or full coalitions and mismatched dimensions.
    pub fn new(d_eff: usize, coalitions: Vec<CoalitionMask>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut weights = Vec::with_capacity(coalitions.len());
        for c in &coalitions {
            if c.len() != d_eff {
                return Err(PrefShapError::Shape {
                    context: "coalition dimension",
                    expected: d_eff,
                    actual: c.len(),
                });
            }
            if !seen.insert(c.clone()) {
                return Err(PrefShapError::Input("duplicate coalition in batch".into()));
            }
            weights.push(shap_weight(c.cardinality(), d_eff)?);
        }
        Ok(Self {
            coalitions,
            weights,
            d_eff,
        })
    }

    pub fn sample<R: Rng + ?Sized>(n: usize, d_eff: usize, rng: &mut R) -> Result<Self> {
        if d_eff < 2 {
            return Self::new(d_eff, Vec::new());
        }
        Self::new(d_eff, sample_coalitions(n, d_eff, rng)?)
    }

    pub fn coalitions(&self) -> &[CoalitionMask] {
        &self.coalitions
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn d_eff(&self) -> usize {
        self.d_eff
    }
    pub fn len(&self) -> usize {
        self.coalitions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.coalitions.is_empty()
    }

    /// Binary design matrix `Z` (n_S × d_eff).
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.d_eff, |i, j| if self.coalitions[i].contains(j) { 1.0 } else { 0.0 })
    }
}

/// Factorised constrained regression for a fixed coalition batch, reusable
/// across every game sharing it.
pub struct ShapleyRegression<'a> {
    batch: &'a CoalitionBatch,
    normal: Option<CholeskyFactor>,
}

impl<'a> ShapleyRegression<'a> {
    pub fn new(batch: &'a CoalitionBatch) -> Result<Self> {
        let d = batch.d_eff;
        if d <= 1 {
            return Ok(Self { batch, normal: None });
        }
        if batch.len() < d - 1 {
            return Err(PrefShapError::UnderDetermined(format!(
                "{} coalitions for {} features",
                batch.len(),
                d
            )));
        }
        let p = d - 1;
        let mut normal = DMatrix::zeros(p, p);
        let mut row = vec![0.0; p];
        for (c, w) in batch.coalitions.iter().zip(&batch.weights) {
            fill_row(c, &mut row);
            for a in 0..p {
                if row[a] == 0.0 {
                    continue;
                }
                for b in 0..p {
                    normal[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let factor = CholeskyFactor::new(&normal).map_err(|_| {
            PrefShapError::UnderDetermined(format!(
                "the {} coalitions do not identify {} features",
                batch.len(),
                d
            ))
        })?;
        Ok(Self {
            batch,
            normal: Some(factor),
        })
    }

    /// Attributions for one game with `values` aligned to the batch.
    pub fn solve(&self, values: &[f64], v_empty: f64, v_full: f64) -> Result<Vec<f64>> {
        if values.len() != self.batch.len() {
            return Err(PrefShapError::Shape {
                context: "coalition values",
                expected: self.batch.len(),
                actual: values.len(),
            });
        }
        let total = v_full - v_empty;
        match self.batch.d_eff {
            0 => return Ok(Vec::new()),
            1 => return Ok(vec![total]),
            _ => {}
        }
        let p = self.batch.d_eff - 1;
        let mut rhs = DVector::zeros(p);
        let mut row = vec![0.0; p];
        for ((c, w), v) in self.batch.coalitions.iter().zip(&self.batch.weights).zip(values) {
            fill_row(c, &mut row);
            let last = if c.contains(p) { total } else { 0.0 };
            let target = v - v_empty - last;
            for a in 0..p {
                rhs[a] += w * row[a] * target;
            }
        }
        let head = self.normal.as_ref().expect("factor for d >= 2").solve_vec(&rhs)?;
        let mut phi: Vec<f64> = head.iter().copied().collect();
        let rest: f64 = phi.iter().sum();
        phi.push(total - rest);
        Ok(phi)
    }
}

/// Design row `z_k - z_last` for `k < d - 1`.
fn fill_row(c: &CoalitionMask, row: &mut [f64]) {
    let last = c.len() - 1;
    let zl = if c.contains(last) { 1.0 } else { 0.0 };
    for (k, r) in row.iter_mut().enumerate() {
        *r = if c.contains(k) { 1.0 } else { 0.0 } - zl;
    }
}

/// Constrained weighted least squares for a single game: the last attribution
/// is eliminated through `Σ φ = v_full - v_empty` and the rest solved from the
/// normal equations by Cholesky.
pub fn solve_wls(batch: &CoalitionBatch, values: &[f64], v_empty: f64, v_full: f64) -> Result<Vec<f64>> {
    ShapleyRegression::new(batch)?.solve(values, v_empty, v_full)
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn exact_shapley<F: Fn(&CoalitionMask) -> f64>(d: usize, value: F) -> Result<Vec<f64>> {
    if d > MAX_EXACT_DIM {
        return Err(PrefShapError::Capacity(format!(
            "exact Shapley values enumerate 2^{d} coalitions; limit is {MAX_EXACT_DIM} features"
        )));
    }
    let total = 1usize << d;
    let values: Vec<f64> = (0..total as u64)
        .map(|v| value(&CoalitionMask::from_integer(v, d).expect("in range")))
        .collect();
    // permutation weight |S|! (d - |S| - 1)! / d! indexed by |S|
    let weights: Vec<f64> = (0..d).map(|s| 1.0 / (d as f64 * binomial(d - 1, s))).collect();
    let mut phi = vec![0.0; d];
    for s in 0..total {
        let size = (s as u64).count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if s & (1 << j) == 0 {
                *p += weights[size] * (values[s | (1 << j)] - values[s]);
            }
        }
    }
    Ok(phi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMode {
    /// Item features of one match.
    Pair,
    /// Item features of one item, averaged over every opponent.
    ItemAvg,
    /// Context features of one match.
    ContextPair,
    /// Context features averaged over a set of matches.
    ContextAvg,
    /// Item features of a UPM through its latent utility difference.
    Upm,
    /// Plain Shapley values of `g` over the concatenated `2d` features.
    ConcatNaive,
}

impl ExplainMode {
    pub fn name(self) -> &'static str {
        match self {
            ExplainMode::Pair => "pair",
            ExplainMode::ItemAvg => "item_avg",
            ExplainMode::ContextPair => "context_pair",
            ExplainMode::ContextAvg => "context_avg",
            ExplainMode::Upm => "upm",
            ExplainMode::ConcatNaive => "concat_naive",
        }
    }
}

impl std::fmt::Display for ExplainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExplainMode {
    type Err = PrefShapError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pair" => ExplainMode::Pair,
            "item_avg" => ExplainMode::ItemAvg,
            "context_pair" => ExplainMode::ContextPair,
            "context_avg" => ExplainMode::ContextAvg,
            "upm" => ExplainMode::Upm,
            "concat_naive" => ExplainMode::ConcatNaive,
            other => return Err(PrefShapError::Config(format!("unknown explanation mode '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub cme: CmeConfig,
    /// Coalitions to sample; `None` uses [`default_n_coalitions`].
    pub n_coalitions: Option<usize>,
    pub seed: u64,
    /// Background rows for the concatenation baseline.
    pub concat_reference_size: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            cme: CmeConfig::default(),
            n_coalitions: None,
            seed: 0,
            concat_reference_size: DEFAULT_CONCAT_REFERENCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub mode: ExplainMode,
    pub query_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub phi: Vec<f64>,
    pub v_full: f64,
    pub v_empty: f64,
    pub n_coalitions_used: usize,
    /// Feature values of the left item minus the right item, when defined.
    #[serde(default)]
    pub feature_diff: Option<Vec<f64>>,
}

impl Explanation {
    /// `Σ φ - (v_full - v_empty)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.v_full - self.v_empty)
    }
}

/// Coalitions over the effective features, embedded in the full feature set.
struct Plan {
    d: usize,
    eff: Vec<usize>,
    sub: CoalitionBatch,
    embedded: Vec<CoalitionMask>,
    /// Non-effective features only; the bottom of the restricted game.
    bottom: CoalitionMask,
}

impl Plan {
    fn new(eff_mask: &CoalitionMask, cfg: &ExplainConfig) -> Result<Self> {
        let d = eff_mask.len();
        let eff: Vec<usize> = eff_mask.indices().collect();
        let de = eff.len();
        let n = cfg.n_coalitions.unwrap_or_else(|| default_n_coalitions(de));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sub = CoalitionBatch::sample(n, de, &mut rng)?;
        let embedded = sub.coalitions().iter().map(|s| embed(s, &eff, eff_mask)).collect();
        Ok(Self {
            d,
            eff,
            sub,
            embedded,
            bottom: eff_mask.complement(),
        })
    }

    /// Coalitions to evaluate: the sample followed by the bottom coalition.
    fn evaluation_set(&self) -> Vec<CoalitionMask> {
        let mut all = self.embedded.clone();
        all.push(self.bottom.clone());
        all
    }

    /// Attributions over all `d` features for each game
    /// `(values at the sample, value at the bottom, value at Ω)`.
    fn solve(&self, games: &[(Vec<f64>, f64, f64)]) -> Result<Vec<Vec<f64>>> {
        let reg = ShapleyRegression::new(&self.sub)?;
        games
            .iter()
            .map(|(values, vb, vf)| {
                let sub_phi = reg.solve(values, *vb, *vf)?;
                let mut phi = vec![0.0; self.d];
                for (k, &j) in self.eff.iter().enumerate() {
                    phi[j] = sub_phi[k];
                }
                Ok(phi)
            })
            .collect()
    }

    /// Per-query games from a batch evaluated on [`Plan::evaluation_set`].
    fn games(&self, batch: &ValueBatch) -> Vec<(Vec<f64>, f64, f64)> {
        let ns = self.sub.len();
        (0..batch.n_queries())
            .map(|q| {
                let values = batch.values[..ns].iter().map(|row| row[q]).collect();
                (values, batch.values[ns][q], batch.v_full[q])
            })
            .collect()
    }

    fn mean_game(&self, batch: &ValueBatch) -> (Vec<f64>, f64, f64) {
        let (values, _, vf) = batch.mean();
        let vb = values[self.sub.len()];
        (values[..self.sub.len()].to_vec(), vb, vf)
    }
}

fn embed(sub: &CoalitionMask, eff: &[usize], eff_mask: &CoalitionMask) -> CoalitionMask {
    let mut bits: Vec<bool> = eff_mask.bits().iter().map(|b| !b).collect();
    for (k, &j) in eff.iter().enumerate() {
        bits[j] = sub.contains(k);
    }
    CoalitionMask::new(bits)
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> DMatrix<f64> {
    let data: Vec<f64> = rows.flatten().collect();
    DMatrix::from_row_slice(data.len() / dim.max(1), dim, &data)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn default_ids(n: usize, ids: Option<Vec<Vec<String>>>) -> Result<Vec<Vec<String>>> {
    match ids {
        Some(ids) if ids.len() == n => Ok(ids),
        Some(ids) => Err(PrefShapError::Shape {
            context: "query ids",
            expected: n,
            actual: ids.len(),
        }),
        None => Ok((0..n).map(|i| vec![i.to_string()]).collect()),
    }
}

/// Pref-SHAP attributions over item features for each query pair.
///
/// A C-GPM is evaluated at each query's context, or at the average training
/// context when the query carries none.
pub fn explain_pairs(
    model: &PreferenceModel,
    queries: &[Query],
    ids: Option<Vec<Vec<String>>>,
    cfg: &ExplainConfig,
) -> Result<Vec<Explanation>> {
    let ids = default_ids(queries.len(), ids)?;
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let explained = stack(queries.iter().flat_map(|q| [q.left.clone(), q.right.clone()]), model.dim());
    let plan = Plan::new(&effective_features(&explained), cfg)?;
    let batch = value_items(model, queries, &plan.evaluation_set(), &cfg.cme)?;
    let phis = plan.solve(&plan.games(&batch))?;
    Ok(phis
        .into_iter()
        .zip(queries)
        .zip(ids)
        .enumerate()
        .map(|(k, ((phi, q), id))| Explanation {
            mode: ExplainMode::Pair,
            query_ids: id,
            feature_names: model.feature_names().to_vec(),
            phi,
            v_full: batch.v_full[k],
            v_empty: batch.values[plan.sub.len()][k],
            n_coalitions_used: plan.sub.len(),
            feature_diff: Some(diff(&q.left, &q.right)),
        })
        .collect())
}

/// Item-level attributions: the pair game of `item` against every training
/// item, averaged before the regression.
pub fn explain_item_avg(
    model: &PreferenceModel,
    item: &[f64],
    id: &str,
    context: Option<&[f64]>,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    let items = model.items();
    let queries: Vec<Query> = (0..items.nrows())
        .map(|i| Query {
            context: context.map(|c| c.to_vec()),
            left: item.to_vec(),
            right: items.row(i).iter().copied().collect(),
        })
        .collect();
    let mut explained = items.clone().insert_row(items.nrows(), 0.0);
    for (j, v) in item.iter().enumerate() {
        explained[(items.nrows(), j)] = *v;
    }
    let plan = Plan::new(&effective_features(&explained), cfg)?;
    let batch = value_items(model, &queries, &plan.evaluation_set(), &cfg.cme)?;
    let game = plan.mean_game(&batch);
    let phi = plan.solve(std::slice::from_ref(&game))?.remove(0);
    Ok(Explanation {
        mode: ExplainMode::ItemAvg,
        query_ids: vec![id.to_string()],
        feature_names: model.feature_names().to_vec(),
        phi,
        v_full: game.2,
        v_empty: game.1,
        n_coalitions_used: plan.sub.len(),
        feature_diff: None,
    })
}

fn context_plan_batch(model: &PreferenceModel, queries: &[Query], cfg: &ExplainConfig) -> Result<(Plan, ValueBatch)> {
    let explained = stack(
        queries.iter().map(|q| {
            q.context.clone().unwrap_or_default()
        }),
        model.context_dim(),
    );
    if explained.nrows() != queries.len() {
        return Err(PrefShapError::Input("context explanations need a context on every query".into()));
    }
    let plan = Plan::new(&effective_features(&explained), cfg)?;
    let batch = value_context(model, queries, &plan.evaluation_set(), &cfg.cme)?;
    Ok((plan, batch))
}

/// Pref-SHAP attributions over context features of a C-GPM for each query.
pub fn explain_context_pairs(
    model: &PreferenceModel,
    queries: &[Query],
    ids: Option<Vec<Vec<String>>>,
    cfg: &ExplainConfig,
) -> Result<Vec<Explanation>> {
    let ids = default_ids(queries.len(), ids)?;
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let (plan, batch) = context_plan_batch(model, queries, cfg)?;
    let phis = plan.solve(&plan.games(&batch))?;
    Ok(phis
        .into_iter()
        .zip(ids)
        .enumerate()
        .map(|(k, (phi, id))| Explanation {
            mode: ExplainMode::ContextPair,
            query_ids: id,
            feature_names: model.context_feature_names().to_vec(),
            phi,
            v_full: batch.v_full[k],
            v_empty: batch.values[plan.sub.len()][k],
            n_coalitions_used: plan.sub.len(),
            feature_diff: None,
        })
        .collect())
}

/// Context attributions of the game averaged over `queries`.
pub fn explain_context_avg(
    model: &PreferenceModel,
    queries: &[Query],
    id: &str,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    if queries.is_empty() {
        return Err(PrefShapError::Input("no matches to average over".into()));
    }
    let (plan, batch) = context_plan_batch(model, queries, cfg)?;
    let game = plan.mean_game(&batch);
    let phi = plan.solve(std::slice::from_ref(&game))?.remove(0);
    Ok(Explanation {
        mode: ExplainMode::ContextAvg,
        query_ids: vec![id.to_string()],
        feature_names: model.context_feature_names().to_vec(),
        phi,
        v_full: game.2,
        v_empty: game.1,
        n_coalitions_used: plan.sub.len(),
        feature_diff: None,
    })
}

/// Attributions of a UPM's preference `f(left) - f(right)` through the
/// utility game of each item, which is the difference of two utility games.
pub fn explain_utility_pairs(
    model: &PreferenceModel,
    queries: &[Query],
    ids: Option<Vec<Vec<String>>>,
    cfg: &ExplainConfig,
) -> Result<Vec<Explanation>> {
    let ids = default_ids(queries.len(), ids)?;
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let d = model.dim();
    let explained = stack(queries.iter().flat_map(|q| [q.left.clone(), q.right.clone()]), d);
    let plan = Plan::new(&effective_features(&explained), cfg)?;
    let batch = value_utility(model, &explained, &plan.evaluation_set(), &cfg.cme)?;
    let ns = plan.sub.len();
    let games: Vec<(Vec<f64>, f64, f64)> = (0..queries.len())
        .map(|k| {
            let (l, r) = (2 * k, 2 * k + 1);
            let values = batch.values[..ns].iter().map(|row| row[l] - row[r]).collect();
            (values, batch.values[ns][l] - batch.values[ns][r], batch.v_full[l] - batch.v_full[r])
        })
        .collect();
    let phis = plan.solve(&games)?;
    Ok(phis
        .into_iter()
        .zip(games)
        .zip(queries.iter().zip(ids))
        .map(|((phi, game), (q, id))| Explanation {
            mode: ExplainMode::Upm,
            query_ids: id,
            feature_names: model.feature_names().to_vec(),
            phi,
            v_full: game.2,
            v_empty: game.1,
            n_coalitions_used: ns,
            feature_diff: Some(diff(&q.left, &q.right)),
        })
        .collect())
}

/// Names of the concatenated features: every item feature as `_left` then `_right`.
pub fn concat_feature_names(names: &[String]) -> Vec<String> {
    names
        .iter()
        .map(|n| format!("{n}_left"))
        .chain(names.iter().map(|n| format!("{n}_right")))
        .collect()
}

/// Baseline attributions of a GPM treated as a function of `(x_left ∥ x_right)`.
pub fn explain_concat(
    model: &PreferenceModel,
    queries: &[Query],
    ids: Option<Vec<Vec<String>>>,
    cfg: &ExplainConfig,
) -> Result<Vec<Explanation>> {
    let ids = default_ids(queries.len(), ids)?;
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let d = model.dim();
    let z = stack(
        queries.iter().map(|q| [q.left.as_slice(), q.right.as_slice()].concat()),
        2 * d,
    );
    let plan = Plan::new(&effective_features(&z), cfg)?;
    let reference = concat_reference(model, cfg.concat_reference_size, cfg.seed)?;
    let batch = value_concat(model, &z, &plan.evaluation_set(), &reference, &cfg.cme)?;
    let phis = plan.solve(&plan.games(&batch))?;
    let names = concat_feature_names(model.feature_names());
    Ok(phis
        .into_iter()
        .zip(ids)
        .enumerate()
        .map(|(k, (phi, id))| Explanation {
            mode: ExplainMode::ConcatNaive,
            query_ids: id,
            feature_names: names.clone(),
            phi,
            v_full: batch.v_full[k],
            v_empty: batch.values[plan.sub.len()][k],
            n_coalitions_used: plan.sub.len(),
            feature_diff: None,
        })
        .collect())
}

/// Explains the given matches of `data`.
///
/// Pair, UPM and context modes orient each match with the winner on the left,
/// so positive attributions favour the observed winner. The concatenation
/// baseline keeps the stored order. Context averaging returns a single
/// explanation; item averaging is not match-based and is rejected.
pub fn explain_matches(
    model: &PreferenceModel,
    data: &Dataset,
    matches: &[usize],
    mode: ExplainMode,
    cfg: &ExplainConfig,
) -> Result<Vec<Explanation>> {
    let mut queries = Vec::with_capacity(matches.len());
    let mut ids = Vec::with_capacity(matches.len());
    for &j in matches {
        let m = data.matches.get(j).ok_or_else(|| PrefShapError::Input(format!("match {j} out of range")))?;
        let (w, l) = if mode != ExplainMode::ConcatNaive && m.y < 0 {
            (m.right, m.left)
        } else {
            (m.left, m.right)
        };
        let context = match (model.kind(), m.context, &data.contexts) {
            (ModelKind::Cgpm, Some(c), Some(t)) => Some(t.row(c)),
            (ModelKind::Cgpm, _, _) => {
                return Err(PrefShapError::Input(format!("match {j} has no context for a C-GPM")))
            }
            _ => None,
        };
        let mut id = vec![data.items.ids[w].clone(), data.items.ids[l].clone()];
        if let (Some(c), Some(t)) = (m.context, &data.contexts) {
            id.push(t.ids[c].clone());
        }
        queries.push(Query {
            context,
            left: data.items.row(w),
            right: data.items.row(l),
        });
        ids.push(id);
    }
    match mode {
        ExplainMode::Pair => explain_pairs(model, &queries, Some(ids), cfg),
        ExplainMode::Upm => explain_utility_pairs(model, &queries, Some(ids), cfg),
        ExplainMode::ContextPair => explain_context_pairs(model, &queries, Some(ids), cfg),
        ExplainMode::ContextAvg => Ok(vec![explain_context_avg(model, &queries, "all", cfg)?]),
        ExplainMode::ConcatNaive => explain_concat(model, &queries, Some(ids), cfg),
        ExplainMode::ItemAvg => Err(PrefShapError::Config(
            "item_avg explains items, not matches".into(),
        )),
    }
}

/// Explains a single query in the given mode.
///
/// `ItemAvg` explains `query.left` against every training item and
/// `ContextAvg` degenerates to the single query's context game.
pub fn explain(model: &PreferenceModel, query: &Query, mode: ExplainMode, cfg: &ExplainConfig) -> Result<Explanation> {
    let one = std::slice::from_ref(query);
    let mut out = match mode {
        ExplainMode::Pair => explain_pairs(model, one, None, cfg)?,
        ExplainMode::Upm => explain_utility_pairs(model, one, None, cfg)?,
        ExplainMode::ContextPair => explain_context_pairs(model, one, None, cfg)?,
        ExplainMode::ConcatNaive => explain_concat(model, one, None, cfg)?,
        ExplainMode::ContextAvg => vec![explain_context_avg(model, one, "0", cfg)?],
        ExplainMode::ItemAvg => vec![explain_item_avg(model, &query.left, "0", query.context.as_deref(), cfg)?],
    };
    Ok(out.remove(0))
}

/// Mean `|φ_j|` per feature over a set of explanations.
pub fn mean_abs_phi(explanations: &[Explanation]) -> Vec<f64> {
    let Some(first) = explanations.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.phi.len()];
    for e in explanations {
        for (a, p) in acc.iter_mut().zip(&e.phi) {
            *a += p.abs();
        }
    }
    let n = explanations.len() as f64;
    acc.iter().map(|a| a / n).collect()
}

/// Feature indices sorted by decreasing mean `|φ|`.
pub fn feature_ranking(explanations: &[Explanation]) -> Vec<usize> {
    let m = mean_abs_phi(explanations);
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|a, b| m[*b].total_cmp(&m[*a]).then(a.cmp(b)));
    idx
}

#[derive(Serialize)]
struct CsvRow<'a> {
    query_id: String,
    feature: &'a str,
    phi: f64,
    v_full: f64,
    v_empty: f64,
    mode: &'a str,
    feature_diff: Option<f64>,
    efficiency_gap: f64,
    format_version: u32,
}

/// One row per explanation and feature. Query ids are joined with `|`.
pub fn write_csv<W: Write>(out: W, explanations: &[Explanation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in explanations {
        let gap = e.efficiency_gap();
        for (j, name) in e.feature_names.iter().enumerate() {
            w.serialize(CsvRow {
                query_id: e.query_ids.join("|"),
                feature: name,
                phi: e.phi[j],
                v_full: e.v_full,
                v_empty: e.v_empty,
                mode: e.mode.name(),
                feature_diff: e.feature_diff.as_ref().map(|d| d[j]),
                efficiency_gap: gap,
                format_version: FORMAT_VERSION,
            })
            .map_err(|e| PrefShapError::Io(std::io::Error::other(e)))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ExplanationFile {
    format_version: u32,
    explanations: Vec<Explanation>,
}

pub fn to_json(explanations: &[Explanation]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ExplanationFile {
        format_version: FORMAT_VERSION,
        explanations: explanations.to_vec(),
    })?)
}

pub fn from_json(s: &str) -> Result<Vec<Explanation>> {
    let file: ExplanationFile = serde_json::from_str(s)?;
    if file.format_version != FORMAT_VERSION {
        return Err(PrefShapError::Input(format!(
            "unsupported explanation format version {}",
            file.format_version
        )));
    }
    Ok(file.explanations)
}

pub fn save_csv(path: &Path, explanations: &[Explanation]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, explanations)
}

pub fn save_json(path: &Path, explanations: &[Explanation]) -> Result<()> {
    std::fs::write(path, to_json(explanations)?)?;
    Ok(())
}

pub fn load_json(path: &Path) -> Result<Vec<Explanation>> {
    from_json(&std::fs::read_to_string(path)?)
}
