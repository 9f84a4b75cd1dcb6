//! Closed-form value functions built on conditional mean embeddings.
//!
//! For a coalition `S` every value function here needs the matrix
//! `Γ[i, c] = k_S(X_i, q_c) · μ̂(X_i)[c]`, where
//! `μ̂(X_i)[c] = σ² Σ_t k_{S^c}(X_i, X_t) β_t(q_c)` evaluates the empirical
//! conditional mean embedding of `X_{S^c}` given `X_S = q_{c,S}` and
//! `β(q) = (K_S + nλ I)⁻¹ k_S(X, q)`. The preferential value of a query pair
//! is then the model score with kernel columns replaced by columns of `Γ`.
//!
//! Boundary coalitions use their analytic limits: with `S = Ω` the embedding
//! factor is 1, so `Γ` equals the kernel columns and the value equals the
//! model score; with `S = ∅` the embedding is the plain mean embedding, `Γ`
//! no longer depends on the query and pair values vanish.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, PrefShapError, Result};
use crate::kernel::{scaled_gram, CoalitionMask, KernelParams};
use crate::linalg::{batched_cg, BatchedSystem, CholeskyFactor, SystemMatrices};
use crate::models::{col, dot, predict_g, ModelKind, PreferenceModel, Query};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmeSolver {
    Cholesky,
    BatchedCg,
}

/// Distribution the absent features are integrated against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Observational conditional `p(X_{S^c} | X_S = x_S)`.
    Conditional,
    /// Marginal `p(X_{S^c})`.
    Marginal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmeConfig {
    /// Diagonal shift `nλ` added to the item conditioning Gram.
    pub ridge_items: f64,
    /// Diagonal shift `mλ'` added to the context conditioning Gram.
    pub ridge_ctx: f64,
    pub solver: CmeSolver,
    pub cg_tol: f64,
    pub cg_max_its: usize,
    pub reference: Reference,
}

impl Default for CmeConfig {
    fn default() -> Self {
        Self {
            ridge_items: 1e-3,
            ridge_ctx: 1e-3,
            solver: CmeSolver::Cholesky,
            cg_tol: crate::linalg::DEFAULT_CG_TOL,
            cg_max_its: crate::linalg::DEFAULT_CG_MAX_ITS,
            reference: Reference::Conditional,
        }
    }
}

impl CmeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ridge_items", self.ridge_items), ("ridge_ctx", self.ridge_ctx)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PrefShapError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.cg_tol > 0.0) {
            return Err(PrefShapError::Config("cg_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Values of a game at each coalition for each query.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueBatch {
    pub coalitions: Vec<CoalitionMask>,
    /// `values[s][q]`: value of coalition `s` for query `q`.
    pub values: Vec<Vec<f64>>,
    pub v_empty: Vec<f64>,
    pub v_full: Vec<f64>,
}

impl ValueBatch {
    pub fn n_queries(&self) -> usize {
        self.v_full.len()
    }

    /// Column of values for one query across all coalitions.
    pub fn query_values(&self, q: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[q]).collect()
    }

    /// Average game over all queries.
    pub fn mean(&self) -> (Vec<f64>, f64, f64) {
        let nq = self.n_queries().max(1) as f64;
        let values = self.values.iter().map(|row| row.iter().sum::<f64>() / nq).collect();
        let ve = self.v_empty.iter().sum::<f64>() / nq;
        let vf = self.v_full.iter().sum::<f64>() / nq;
        (values, ve, vf)
    }
}

/// Weighted sample population over which conditional embeddings are estimated.
struct Population<'a> {
    x: &'a DMatrix<f64>,
    params: &'a KernelParams,
    /// Multiplicity of each row; `None` means every row counts once.
    counts: Option<Vec<f64>>,
    shift: f64,
    cfg: &'a CmeConfig,
}

impl Population<'_> {
    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn total(&self) -> f64 {
        match &self.counts {
            Some(c) => c.iter().sum(),
            None => self.n() as f64,
        }
    }

    fn unit_gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, bits: &[bool]) -> DMatrix<f64> {
        scaled_gram(a, b, bits, self.params, 1.0)
    }

    /// Mean-embedding factor `σ² Σ_t w_t k_B(X_i, X_t)` with `w` the sample weights.
    fn mean_factor(&self, bits: &[bool]) -> Vec<f64> {
        let k = self.unit_gram(self.x, self.x, bits);
        let total = self.total();
        let s2 = self.params.signal_variance();
        (0..self.n())
            .map(|i| {
                let mut acc = 0.0;
                for t in 0..self.n() {
                    let w = self.counts.as_ref().map_or(1.0, |c| c[t]);
                    acc += k[(i, t)] * w;
                }
                s2 * acc / total
            })
            .collect()
    }

    fn sqrt_counts(&self) -> Option<Vec<f64>> {
        self.counts.as_ref().map(|c| c.iter().map(|v| v.sqrt()).collect())
    }

    /// Conditioning system `C^½ K_S C^½` and right-hand side `C^½ k_S(X, Q)`.
    fn system(&self, bits: &[bool], q: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut ks = self.unit_gram(self.x, self.x, bits);
        let ksq = self.unit_gram(self.x, q, bits);
        let mut rhs = ksq.clone();
        if let Some(sc) = self.sqrt_counts() {
            for j in 0..ks.ncols() {
                for i in 0..ks.nrows() {
                    ks[(i, j)] *= sc[i] * sc[j];
                }
            }
            for j in 0..rhs.ncols() {
                for i in 0..rhs.nrows() {
                    rhs[(i, j)] *= sc[i];
                }
            }
        }
        (ks, rhs, ksq)
    }

    /// `Γ` from the solved embedding weights `η` (scaled back by `C^½`).
    fn gamma_from_weights(&self, bits: &[bool], ksq: &DMatrix<f64>, mut eta: DMatrix<f64>) -> DMatrix<f64> {
        if let Some(sc) = self.sqrt_counts() {
            for j in 0..eta.ncols() {
                for i in 0..eta.nrows() {
                    eta[(i, j)] *= sc[i];
                }
            }
        }
        let comp: Vec<bool> = bits.iter().map(|b| !b).collect();
        let ksc = self.unit_gram(self.x, self.x, &comp);
        let mut factor = ksc * eta;
        factor *= self.params.signal_variance();
        factor.component_mul(ksq)
    }

    fn gamma_direct(&self, mask: &CoalitionMask, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let bits = mask.bits();
        if mask.is_full() {
            return Some(scaled_gram(self.x, q, bits, self.params, self.params.signal_variance()));
        }
        if mask.is_empty() {
            let mean = self.mean_factor(&vec![true; bits.len()]);
            return Some(DMatrix::from_fn(self.n(), q.nrows(), |i, _| mean[i]));
        }
        if self.cfg.reference == Reference::Marginal {
            let comp: Vec<bool> = bits.iter().map(|b| !b).collect();
            let mean = self.mean_factor(&comp);
            let ksq = self.unit_gram(self.x, q, bits);
            return Some(DMatrix::from_fn(self.n(), q.nrows(), |i, c| ksq[(i, c)] * mean[i]));
        }
        None
    }

    /// Evaluates `eval(Γ_S)` for each coalition, in order.
    fn for_each_gamma<T, F>(&self, q: &DMatrix<f64>, coalitions: &[CoalitionMask], eval: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&DMatrix<f64>) -> T + Sync,
    {
        for c in coalitions {
            check_len("coalition dimension", self.params.dim(), c.len())?;
        }
        match self.cfg.solver {
            CmeSolver::Cholesky => coalitions
                .par_iter()
                .map(|mask| {
                    if let Some(g) = self.gamma_direct(mask, q) {
                        return Ok(eval(&g));
                    }
                    let (ks, rhs, ksq) = self.system(mask.bits(), q);
                    let eta = CholeskyFactor::with_shift(&ks, self.shift)
                        .and_then(|f| f.solve(&rhs))
                        .map_err(|e| coalition_error(mask, e))?;
                    Ok(eval(&self.gamma_from_weights(mask.bits(), &ksq, eta)))
                })
                .collect(),
            CmeSolver::BatchedCg => {
                let precond = self.full_preconditioner()?;
                let chunks: Vec<Vec<T>> = coalitions
                    .par_chunks(16)
                    .map(|chunk| self.cg_chunk(chunk, q, &precond, &eval))
                    .collect::<Result<_>>()?;
                Ok(chunks.into_iter().flatten().collect())
            }
        }
    }

    /// `(K_Ω + shift I)⁻¹` of the full-feature conditioning Gram.
    fn full_preconditioner(&self) -> Result<DMatrix<f64>> {
        let full = vec![true; self.params.dim()];
        let (k, _, _) = self.system(&full, &DMatrix::zeros(0, self.params.dim()));
        CholeskyFactor::with_shift(&k, self.shift)?.inverse()
    }

    fn cg_chunk<T, F>(
        &self,
        chunk: &[CoalitionMask],
        q: &DMatrix<f64>,
        precond: &DMatrix<f64>,
        eval: &F,
    ) -> Result<Vec<T>>
    where
        F: Fn(&DMatrix<f64>) -> T,
    {
        let mut out: Vec<Option<T>> = Vec::with_capacity(chunk.len());
        let mut pending = Vec::new();
        let mut mats = Vec::new();
        let mut rhss = Vec::new();
        let mut ksqs = Vec::new();
        for (i, mask) in chunk.iter().enumerate() {
            if let Some(g) = self.gamma_direct(mask, q) {
                out.push(Some(eval(&g)));
                continue;
            }
            out.push(None);
            let (mut ks, rhs, ksq) = self.system(mask.bits(), q);
            for d in 0..ks.nrows() {
                ks[(d, d)] += self.shift;
            }
            pending.push(i);
            mats.push(ks);
            rhss.push(rhs);
            ksqs.push(ksq);
        }
        if !pending.is_empty() {
            let sys = BatchedSystem::new(SystemMatrices::PerSystem(mats), rhss, Some(precond.clone()))?;
            let sols = batched_cg(&sys, self.cfg.cg_tol, self.cfg.cg_max_its).map_err(|e| match e {
                PrefShapError::Divergence { system, .. } => coalition_error(&chunk[pending[system]], e),
                other => other,
            })?;
            for ((i, sol), ksq) in pending.iter().zip(sols).zip(ksqs) {
                if !sol.converged {
                    log::warn!(
                        "CG for coalition {} stopped at relative residual {:.2e}",
                        mask_string(&chunk[*i]),
                        sol.relative_residual
                    );
                }
                out[*i] = Some(eval(&self.gamma_from_weights(chunk[*i].bits(), &ksq, sol.solution)));
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every coalition evaluated")).collect())
    }
}

fn mask_string(mask: &CoalitionMask) -> String {
    mask.bits().iter().map(|b| if *b { '1' } else { '0' }).collect()
}

fn coalition_error(mask: &CoalitionMask, e: PrefShapError) -> PrefShapError {
    PrefShapError::Numerical(format!("CME solve for coalition {} failed: {e}", mask_string(mask)))
}

/// Right factor of `Γ`: `σ² K_{S^c}(X, X) (K_S + nλ I)⁻¹ K_S(X, Q)` (n × q).
///
/// `cfg.ridge_items` is the diagonal shift `nλ`. Coalitions `Ω` and `∅` return
/// the constant 1 scaled by the signal variance and the mean embedding
/// respectively.
pub fn cme_factor(
    coalition: &CoalitionMask,
    x: &DMatrix<f64>,
    q: &DMatrix<f64>,
    params: &KernelParams,
    cfg: &CmeConfig,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    check_len("cme_factor item columns", params.dim(), x.ncols())?;
    check_len("cme_factor query columns", params.dim(), q.ncols())?;
    check_len("cme_factor coalition", params.dim(), coalition.len())?;
    let bits = coalition.bits();
    let s2 = params.signal_variance();
    if coalition.is_full() {
        return Ok(DMatrix::from_element(x.nrows(), q.nrows(), s2));
    }
    let pop = Population {
        x,
        params,
        counts: None,
        shift: cfg.ridge_items,
        cfg,
    };
    let comp: Vec<bool> = bits.iter().map(|b| !b).collect();
    if coalition.is_empty() || cfg.reference == Reference::Marginal {
        let mean = pop.mean_factor(&comp);
        return Ok(DMatrix::from_fn(x.nrows(), q.nrows(), |i, _| mean[i]));
    }
    let ks = scaled_gram(x, x, bits, params, 1.0);
    let ksq = scaled_gram(x, q, bits, params, 1.0);
    let beta = CholeskyFactor::with_shift(&ks, cfg.ridge_items)?.solve(&ksq)?;
    let mut factor = scaled_gram(x, x, &comp, params, 1.0) * beta;
    factor *= s2;
    Ok(factor)
}

/// `Γ_S(X, Q) = K_S(X, Q) ⊙ cme_factor(S, X, Q)` (n × q).
pub fn gamma_matrix(
    coalition: &CoalitionMask,
    x: &DMatrix<f64>,
    q: &DMatrix<f64>,
    params: &KernelParams,
    cfg: &CmeConfig,
) -> Result<DMatrix<f64>> {
    let pop = Population {
        x,
        params,
        counts: None,
        shift: cfg.ridge_items,
        cfg,
    };
    let mut out = pop.for_each_gamma(q, std::slice::from_ref(coalition), |g| g.clone())?;
    Ok(out.pop().expect("one coalition"))
}

/// Distinct rows of a list of vectors, with the index of each input in the result.
fn distinct_rows(rows: &[&[f64]], dim: usize) -> (DMatrix<f64>, Vec<usize>) {
    let mut map: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut index = Vec::with_capacity(rows.len());
    for r in rows {
        let key: Vec<u64> = r.iter().map(|v| v.to_bits()).collect();
        let next = map.len();
        let id = *map.entry(key).or_insert_with(|| {
            data.extend_from_slice(r);
            next
        });
        index.push(id);
    }
    (DMatrix::from_row_slice(map.len(), dim, &data), index)
}

fn check_query_dims(model: &PreferenceModel, queries: &[Query]) -> Result<()> {
    for qr in queries {
        check_len("query left item", model.dim(), qr.left.len())?;
        check_len("query right item", model.dim(), qr.right.len())?;
        if let Some(u) = &qr.context {
            check_len("query context", model.context_dim(), u.len())?;
        }
    }
    Ok(())
}

fn item_population<'a>(model: &'a PreferenceModel, cfg: &'a CmeConfig) -> Population<'a> {
    Population {
        x: model.items(),
        params: model.kernel_item(),
        counts: None,
        shift: cfg.ridge_items,
        cfg,
    }
}

/// Context weights `k_U(U_v, u)` for a C-GPM queried at a fixed context, or
/// their average over the training contexts when `u` is absent.
fn fixed_context_weights(model: &PreferenceModel, u: Option<&[f64]>) -> Result<Vec<f64>> {
    let ctx = model.contexts().expect("C-GPM has contexts");
    match u {
        Some(u) => {
            let q = DMatrix::from_row_slice(1, u.len(), u);
            Ok(col(&model.context_columns(&q)?, 0).to_vec())
        }
        None => {
            let k = model.context_columns(ctx)?;
            let pairs = model.train_pairs();
            let m = pairs.len() as f64;
            Ok((0..ctx.nrows())
                .map(|v| pairs.iter().map(|p| k[(v, p.context.unwrap())]).sum::<f64>() / m)
                .collect())
        }
    }
}

/// Item-feature preferential values of a GPM (or a C-GPM at each query's
/// context) for each query pair and coalition over the item features.
///
/// A C-GPM query without a context is evaluated against the average context
/// kernel over the training matches.
pub fn value_items(
    model: &PreferenceModel,
    queries: &[Query],
    coalitions: &[CoalitionMask],
    cfg: &CmeConfig,
) -> Result<ValueBatch> {
    cfg.validate()?;
    if model.kind() == ModelKind::Upm {
        return Err(PrefShapError::ModelKind {
            expected: "gpm or cgpm",
            actual: "upm",
        });
    }
    check_query_dims(model, queries)?;
    let rows: Vec<&[f64]> = queries
        .iter()
        .flat_map(|qr| [qr.left.as_slice(), qr.right.as_slice()])
        .collect();
    let (qmat, index) = distinct_rows(&rows, model.dim());
    let ctx_weights: Vec<Option<Vec<f64>>> = queries
        .iter()
        .map(|qr| match model.kind() {
            ModelKind::Cgpm => fixed_context_weights(model, qr.context.as_deref()).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    let pop = item_population(model, cfg);
    let eval = |g: &DMatrix<f64>| -> Vec<f64> {
        (0..queries.len())
            .map(|k| {
                model.score_columns(
                    col(g, index[2 * k]),
                    col(g, index[2 * k + 1]),
                    ctx_weights[k].as_deref(),
                )
            })
            .collect()
    };
    let values = pop.for_each_gamma(&qmat, coalitions, eval)?;
    let d = model.dim();
    let bounds = pop.for_each_gamma(&qmat, &[CoalitionMask::empty(d), CoalitionMask::full(d)], eval)?;
    Ok(ValueBatch {
        coalitions: coalitions.to_vec(),
        values,
        v_empty: bounds[0].clone(),
        v_full: bounds[1].clone(),
    })
}

/// Context-feature preferential values of a C-GPM. Coalitions range over the
/// context features; item features stay fixed at the query pair.
///
/// The conditioning population is the `m` training contexts. Matches sharing
/// a context row are merged with multiplicities, which gives the same
/// embedding as the `m × m` system.
pub fn value_context(
    model: &PreferenceModel,
    queries: &[Query],
    coalitions: &[CoalitionMask],
    cfg: &CmeConfig,
) -> Result<ValueBatch> {
    cfg.validate()?;
    if model.kind() != ModelKind::Cgpm {
        return Err(PrefShapError::ModelKind {
            expected: "cgpm",
            actual: model.kind().name(),
        });
    }
    check_query_dims(model, queries)?;
    let ctx_rows = queries
        .iter()
        .map(|qr| {
            qr.context
                .as_deref()
                .ok_or_else(|| PrefShapError::Input("context queries need a context vector".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (umat, uindex) = distinct_rows(&ctx_rows, model.context_dim());
    let item_rows: Vec<&[f64]> = queries
        .iter()
        .flat_map(|qr| [qr.left.as_slice(), qr.right.as_slice()])
        .collect();
    let (xmat, xindex) = distinct_rows(&item_rows, model.dim());
    let item_cols = model.item_columns(&xmat)?;

    let ctx = model.contexts().expect("C-GPM has contexts");
    let mut counts = vec![0.0; ctx.nrows()];
    for p in model.train_pairs() {
        counts[p.context.unwrap()] += 1.0;
    }
    let pop = Population {
        x: ctx,
        params: model.kernel_ctx().expect("C-GPM has a context kernel"),
        counts: Some(counts),
        shift: cfg.ridge_ctx,
        cfg,
    };
    let eval = |g: &DMatrix<f64>| -> Vec<f64> {
        (0..queries.len())
            .map(|k| {
                model.score_columns(
                    col(&item_cols, xindex[2 * k]),
                    col(&item_cols, xindex[2 * k + 1]),
                    Some(col(g, uindex[k])),
                )
            })
            .collect()
    };
    let values = pop.for_each_gamma(&umat, coalitions, eval)?;
    let d = model.context_dim();
    let bounds = pop.for_each_gamma(&umat, &[CoalitionMask::empty(d), CoalitionMask::full(d)], eval)?;
    Ok(ValueBatch {
        coalitions: coalitions.to_vec(),
        values,
        v_empty: bounds[0].clone(),
        v_full: bounds[1].clone(),
    })
}

/// Values of the latent utility of a UPM at each row of `items`:
/// `ν_{x,S}(f) = Σ_i c_i Γ_S(X_i, x)` with `c = Bᵀα` the per-item coefficients.
pub fn value_utility(
    model: &PreferenceModel,
    items: &DMatrix<f64>,
    coalitions: &[CoalitionMask],
    cfg: &CmeConfig,
) -> Result<ValueBatch> {
    cfg.validate()?;
    if model.kind() != ModelKind::Upm {
        return Err(PrefShapError::ModelKind {
            expected: "upm",
            actual: model.kind().name(),
        });
    }
    check_len("utility query dimension", model.dim(), items.ncols())?;
    let rows: Vec<Vec<f64>> = (0..items.nrows()).map(|i| items.row(i).iter().copied().collect()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let (qmat, index) = distinct_rows(&refs, model.dim());
    let coef = model.utility_coef();
    let pop = item_population(model, cfg);
    let eval = |g: &DMatrix<f64>| -> Vec<f64> { index.iter().map(|&k| dot(coef, col(g, k))).collect() };
    let values = pop.for_each_gamma(&qmat, coalitions, eval)?;
    let d = model.dim();
    let bounds = pop.for_each_gamma(&qmat, &[CoalitionMask::empty(d), CoalitionMask::full(d)], eval)?;
    Ok(ValueBatch {
        coalitions: coalitions.to_vec(),
        values,
        v_empty: bounds[0].clone(),
        v_full: bounds[1].clone(),
    })
}

pub const DEFAULT_CONCAT_REFERENCE: usize = 50;

/// Background sample for the concatenation baseline: `size / 2` training
/// pairs drawn without replacement, each included in both orders, as rows
/// `(x_left ∥ x_right)`.
pub fn concat_reference(model: &PreferenceModel, size: usize, seed: u64) -> Result<DMatrix<f64>> {
    let pairs = model.train_pairs();
    let half = (size / 2).max(1).min(pairs.len());
    if pairs.is_empty() {
        return Err(PrefShapError::Input("model has no training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, pairs.len(), half).into_vec();
    picked.sort_unstable();
    let d = model.dim();
    let x = model.items();
    let mut z = DMatrix::zeros(2 * half, 2 * d);
    for (r, &j) in picked.iter().enumerate() {
        let p = pairs[j];
        for k in 0..d {
            z[(2 * r, k)] = x[(p.left, k)];
            z[(2 * r, d + k)] = x[(p.right, k)];
            z[(2 * r + 1, k)] = x[(p.right, k)];
            z[(2 * r + 1, d + k)] = x[(p.left, k)];
        }
    }
    Ok(z)
}

/// Standard conditional value function of `g` viewed as a function of the
/// `2d` concatenated features `z = (x_left ∥ x_right)`:
/// `ν(S) = Σ_i β_i(z) g(z_S, Z_{i,S^c})` with CME weights
/// `β(z) = (K_S(Z, Z) + shift I)⁻¹ k_S(Z, z)` over the reference rows `Z`.
pub fn value_concat(
    model: &PreferenceModel,
    queries: &DMatrix<f64>,
    coalitions: &[CoalitionMask],
    reference: &DMatrix<f64>,
    cfg: &CmeConfig,
) -> Result<ValueBatch> {
    cfg.validate()?;
    if model.kind() != ModelKind::Gpm {
        return Err(PrefShapError::ModelKind {
            expected: "gpm",
            actual: model.kind().name(),
        });
    }
    let d = model.dim();
    check_len("concat query dimension", 2 * d, queries.ncols())?;
    check_len("concat reference dimension", 2 * d, reference.ncols())?;
    for c in coalitions {
        check_len("concat coalition dimension", 2 * d, c.len())?;
    }
    let zparams = model.kernel_item().duplicated();
    let x = model.items();
    let n = x.nrows();
    let r = reference.nrows();
    let s2 = model.kernel_item().signal_variance();
    let gammas: Vec<f64> = (0..2 * d).map(|k| zparams.gamma(k)).collect();

    // exponent[t][k] = γ_k (X_t,k - v_k)² for a concatenated row v; item t, feature k of 2d.
    let exponents = |v: &[f64]| -> Vec<f64> {
        let mut e = vec![0.0; n * 2 * d];
        for t in 0..n {
            for k in 0..2 * d {
                let diff = x[(t, k % d)] - v[k];
                e[t * 2 * d + k] = gammas[k] * diff * diff;
            }
        }
        e
    };
    let ref_rows: Vec<Vec<f64>> = (0..r).map(|i| reference.row(i).iter().copied().collect()).collect();
    let ref_exp: Vec<Vec<f64>> = ref_rows.par_iter().map(|z| exponents(z)).collect();
    let ref_scores: Vec<f64> = ref_rows
        .iter()
        .map(|z| Query::pair(z[..d].to_vec(), z[d..].to_vec()))
        .collect::<Vec<_>>()
        .chunks(256)
        .map(|qs| predict_g(model, qs))
        .collect::<Result<Vec<_>>>()?
        .concat();

    let q_rows: Vec<Vec<f64>> = (0..queries.nrows()).map(|i| queries.row(i).iter().copied().collect()).collect();
    let full_scores = predict_g(
        model,
        &q_rows
            .iter()
            .map(|z| Query::pair(z[..d].to_vec(), z[d..].to_vec()))
            .collect::<Vec<_>>(),
    )?;
    let mean_ref = ref_scores.iter().sum::<f64>() / r as f64;

    let values = coalitions
        .par_iter()
        .map(|mask| -> Result<Vec<f64>> {
            if mask.is_full() {
                return Ok(full_scores.clone());
            }
            if mask.is_empty() {
                return Ok(vec![mean_ref; q_rows.len()]);
            }
            let bits = mask.bits();
            let weights: DMatrix<f64> = match cfg.reference {
                Reference::Marginal => DMatrix::from_element(r, q_rows.len(), 1.0 / r as f64),
                Reference::Conditional => {
                    let ks = scaled_gram(reference, reference, bits, &zparams, 1.0);
                    let ksq = scaled_gram(reference, queries, bits, &zparams, 1.0);
                    CholeskyFactor::with_shift(&ks, cfg.ridge_items)
                        .and_then(|f| f.solve(&ksq))
                        .map_err(|e| coalition_error(mask, e))?
                }
            };
            let mut out = Vec::with_capacity(q_rows.len());
            let mut kl = vec![0.0; n];
            let mut kr = vec![0.0; n];
            for (c, z) in q_rows.iter().enumerate() {
                let qexp = exponents(z);
                let mut v = 0.0;
                for (i, rexp) in ref_exp.iter().enumerate() {
                    for t in 0..n {
                        let base = t * 2 * d;
                        let (mut el, mut er) = (0.0, 0.0);
                        for k in 0..d {
                            el += if bits[k] { qexp[base + k] } else { rexp[base + k] };
                            er += if bits[d + k] { qexp[base + d + k] } else { rexp[base + d + k] };
                        }
                        kl[t] = s2 * (-el).exp();
                        kr[t] = s2 * (-er).exp();
                    }
                    v += weights[(i, c)] * model.score_columns(&kl, &kr, None);
                }
                out.push(v);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueBatch {
        coalitions: coalitions.to_vec(),
        values,
        v_empty: vec![mean_ref; q_rows.len()],
        v_full: full_scores,
    })
}
