//! Kernel logistic regression for the three preference models.
//!
//! * GPM: Gram of the generalised preferential kernel over training pairs.
//! * C-GPM: the same Gram multiplied elementwise by a kernel on match contexts.
//! * UPM: Gram of the difference kernel
//!   `k(l, l') + k(r, r') - k(l, r') - k(r, l')`, whose functions are
//!   differences of a latent utility `f(l) - f(r)`.
//!
//! All three are fitted on dual coefficients `α` over the training pairs,
//! giving scores `g = Σ_j α_j k_E(pair_j, ·)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use faer::Mat;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Match};
use crate::error::{check_len, PrefShapError, Result};
use crate::kernel::{scaled_gram, KernelParams};
use crate::linalg::CholeskyFactor;
use crate::FORMAT_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Upm,
    Gpm,
    Cgpm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Upm => "upm",
            ModelKind::Gpm => "gpm",
            ModelKind::Cgpm => "cgpm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = PrefShapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "upm" => Ok(ModelKind::Upm),
            "gpm" => Ok(ModelKind::Gpm),
            "cgpm" | "c-gpm" => Ok(ModelKind::Cgpm),
            other => Err(PrefShapError::Config(format!(
                "unknown model kind {other:?} (expected upm, gpm or cgpm)"
            ))),
        }
    }
}

/// Indices of one training comparison into the model's item and context tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub left: usize,
    pub right: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<usize>,
}

impl From<&Match> for TrainPair {
    fn from(m: &Match) -> Self {
        Self {
            left: m.left,
            right: m.right,
            context: m.context,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// KLR ridge `λ`.
    pub ridge: f64,
    pub max_newton_its: usize,
    pub grad_tol: f64,
    pub split_seed: u64,
    /// Multiplier on median-heuristic lengthscales of the item kernel.
    pub lengthscale_scale: f64,
    /// Multiplier on median-heuristic lengthscales of the context kernel.
    pub context_lengthscale_scale: f64,
    /// Explicit kernels; when set they replace the median heuristic.
    pub kernel_item: Option<KernelParams>,
    pub kernel_ctx: Option<KernelParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-3,
            max_newton_its: 50,
            grad_tol: 1e-6,
            split_seed: 0,
            lengthscale_scale: 1.0,
            context_lengthscale_scale: 1.0,
            kernel_item: None,
            kernel_ctx: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge > 0.0) || !self.ridge.is_finite() {
            return Err(PrefShapError::Config(format!("ridge must be positive, got {}", self.ridge)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(PrefShapError::Config(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        for (name, v) in [
            ("lengthscale_scale", self.lengthscale_scale),
            ("context_lengthscale_scale", self.context_lengthscale_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PrefShapError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Outcome of a Newton-IRLS fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlrFit {
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub newton_iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub objective: f64,
}

fn check_labels(y: &[f64]) -> Result<()> {
    if let Some((j, v)) = y.iter().enumerate().find(|(_, v)| **v != 1.0 && **v != -1.0) {
        return Err(PrefShapError::Input(format!(
            "label {j} is {v}, expected -1 or +1"
        )));
    }
    Ok(())
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `Σ log(1 + exp(-y f)) + (λ/2) αᵀ f` with `f = G α`.
fn klr_objective(f: &DVector<f64>, alpha: &DVector<f64>, y: &[f64], ridge: f64) -> f64 {
    let loss: f64 = f.iter().zip(y).map(|(fj, yj)| softplus(-yj * fj)).sum();
    loss + 0.5 * ridge * alpha.dot(f)
}

/// Change of the KLR objective along a step `t Δ`, evaluated without
/// cancellation: `softplus(a + δ) - softplus(a) = log1p(σ(a) expm1(δ))` per
/// comparison, and `(λ/2)(2t Δᵀf + t² ΔᵀGΔ)` for the penalty.
fn objective_change(
    s: &[f64],
    y: &[f64],
    f_dir: &DVector<f64>,
    t: f64,
    lambda: f64,
    lin: f64,
    quad: f64,
) -> f64 {
    let loss: f64 = s
        .iter()
        .zip(y)
        .zip(f_dir.iter())
        .map(|((sj, yj), dj)| (sj * (-yj * t * dj).exp_m1()).ln_1p())
        .sum();
    loss + 0.5 * lambda * (2.0 * t * lin + t * t * quad)
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

/// Fits `α` minimising `Σ_j log(1 + exp(-y_j (Gα)_j)) + (λ/2) αᵀ G α` by
/// damped Newton steps with Armijo backtracking.
///
/// Each step solves `(D G + λ I) Δ = y⊙s - λα`, with `s = σ(-y⊙f)` and
/// `D = diag(s(1 - s))`, through the symmetric system
/// `(λ I + D^½ G D^½) q = D^½ G b`, `Δ = (b - D^½ q) / λ`.
pub fn fit_klr(g: &DMatrix<f64>, y: &[f64], cfg: &TrainConfig) -> Result<KlrFit> {
    cfg.validate()?;
    let m = y.len();
    check_len("fit_klr gram rows", m, g.nrows())?;
    check_len("fit_klr gram columns", m, g.ncols())?;
    check_labels(y)?;
    let lambda = cfg.ridge;

    let mut alpha = DVector::zeros(m);
    let mut f = DVector::zeros(m);
    let mut obj = klr_objective(&f, &alpha, y, lambda);
    let mut history = vec![obj];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;

    loop {
        let s: Vec<f64> = f.iter().zip(y).map(|(fj, yj)| sigmoid(-yj * fj)).collect();
        // b = y⊙s - λα is minus the gradient in the metric of G.
        let b = DVector::from_fn(m, |j, _| y[j] * s[j] - lambda * alpha[j]);
        let gb = g * &b;
        grad_norm = gb.norm();
        if !grad_norm.is_finite() {
            return Err(PrefShapError::Numerical("non-finite KLR gradient".into()));
        }
        if grad_norm <= cfg.grad_tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_newton_its {
            break;
        }

        let sqrt_d: Vec<f64> = s.iter().map(|sj| (sj * (1.0 - sj)).sqrt()).collect();
        let system = Mat::<f64>::from_fn(m, m, |i, j| {
            let v = sqrt_d[i] * g[(i, j)] * sqrt_d[j];
            if i == j {
                v + lambda
            } else {
                v
            }
        });
        let chol = CholeskyFactor::from_faer(system)?;
        let rhs = DVector::from_fn(m, |i, _| sqrt_d[i] * gb[i]);
        let q = chol.solve_vec(&rhs)?;
        let delta = DVector::from_fn(m, |i, _| (b[i] - sqrt_d[i] * q[i]) / lambda);
        let g_delta = g * &delta;
        // Directional derivative of the objective along Δ.
        let slope = -gb.dot(&delta);

        let lin = delta.dot(&f);
        let quad = delta.dot(&g_delta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let change = objective_change(&s, y, &g_delta, t, lambda, lin, quad);
            if change.is_finite() && change <= ARMIJO_C * t * slope.min(0.0) {
                alpha += &delta * t;
                f += &g_delta * t;
                obj += change;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            log::debug!("KLR line search stalled at gradient norm {grad_norm:.3e}");
            break;
        }
        iterations += 1;
        history.push(obj);
        log::debug!("newton step {iterations}: objective {obj:.10e}, step {t}");
    }

    Ok(KlrFit {
        alpha: alpha.iter().copied().collect(),
        iterations,
        converged,
        gradient_norm: grad_norm,
        objective_history: history,
    })
}

/// KLR for the utility model, solved in the `n`-dimensional space of item
/// coefficients `c` with `u = K c` the item utilities and `f_j = u_l - u_r`.
///
/// This is the same problem as [`fit_klr`] on the difference-kernel Gram (the
/// Gram factors as `B K Bᵀ` with `B` the signed pair incidence matrix), at a
/// per-step cost of `n³` instead of `m³`. The returned `α = y⊙s/λ` is the
/// stationary dual representer.
pub fn fit_klr_utility(
    k: &DMatrix<f64>,
    pairs: &[TrainPair],
    y: &[f64],
    cfg: &TrainConfig,
) -> Result<KlrFit> {
    cfg.validate()?;
    let n = k.nrows();
    let m = y.len();
    check_len("fit_klr_utility gram columns", n, k.ncols())?;
    check_len("fit_klr_utility pairs", m, pairs.len())?;
    check_labels(y)?;
    for p in pairs {
        if p.left >= n || p.right >= n {
            return Err(PrefShapError::Input(format!(
                "pair ({}, {}) out of range for {n} items",
                p.left, p.right
            )));
        }
    }
    let lambda = cfg.ridge;
    let diff = |u: &DVector<f64>| DVector::from_fn(m, |j, _| u[pairs[j].left] - u[pairs[j].right]);
    let scatter = |w: &[f64]| {
        let mut out = DVector::zeros(n);
        for (p, wj) in pairs.iter().zip(w) {
            out[p.left] += wj;
            out[p.right] -= wj;
        }
        out
    };
    let mut c = DVector::zeros(n);
    let mut u = DVector::zeros(n);
    let mut f = DVector::zeros(m);
    let mut obj = klr_objective(&f, &DVector::zeros(m), y, lambda);
    let mut history = vec![obj];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;

    loop {
        let s: Vec<f64> = f.iter().zip(y).map(|(fj, yj)| sigmoid(-yj * fj)).collect();
        let ys: Vec<f64> = s.iter().zip(y).map(|(sj, yj)| yj * sj).collect();
        let b = scatter(&ys) - &c * lambda;
        let kb = k * &b;
        grad_norm = kb.norm();
        if !grad_norm.is_finite() {
            return Err(PrefShapError::Numerical("non-finite KLR gradient".into()));
        }
        if grad_norm <= cfg.grad_tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_newton_its {
            break;
        }
        // H = Bᵀ D B, assembled from the pair list.
        let mut h = DMatrix::<f64>::zeros(n, n);
        for (p, sj) in pairs.iter().zip(&s) {
            let w = sj * (1.0 - sj);
            h[(p.left, p.left)] += w;
            h[(p.right, p.right)] += w;
            h[(p.left, p.right)] -= w;
            h[(p.right, p.left)] -= w;
        }
        let mut system = &h * k;
        for i in 0..n {
            system[(i, i)] += lambda;
        }
        let delta = system
            .lu()
            .solve(&b)
            .ok_or_else(|| PrefShapError::Numerical("singular utility Newton system".into()))?;
        let u_delta = k * &delta;
        let f_delta = diff(&u_delta);
        let slope = -kb.dot(&delta);

        let lin = delta.dot(&u);
        let quad = delta.dot(&u_delta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let change = objective_change(&s, y, &f_delta, t, lambda, lin, quad);
            if change.is_finite() && change <= ARMIJO_C * t * slope.min(0.0) {
                c += &delta * t;
                u += &u_delta * t;
                f += &f_delta * t;
                obj += change;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            log::debug!("utility KLR line search stalled at gradient norm {grad_norm:.3e}");
            break;
        }
        iterations += 1;
        history.push(obj);
    }

    let alpha = f
        .iter()
        .zip(y)
        .map(|(fj, yj)| yj * sigmoid(-yj * fj) / lambda)
        .collect();
    Ok(KlrFit {
        alpha,
        iterations,
        converged,
        gradient_norm: grad_norm,
        objective_history: history,
    })
}

fn par_fill(m: usize, entry: impl Fn(usize, usize) -> f64 + Sync) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, m);
    out.as_mut_slice()
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(c, col)| {
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = entry(r, c);
            }
        });
    out
}

/// Gram of the generalised preferential kernel over pairs indexing an item Gram `k`.
pub fn gpm_gram(k: &DMatrix<f64>, pairs: &[TrainPair]) -> DMatrix<f64> {
    par_fill(pairs.len(), |a, b| {
        let (p, q) = (&pairs[a], &pairs[b]);
        k[(p.left, q.left)] * k[(p.right, q.right)] - k[(p.left, q.right)] * k[(p.right, q.left)]
    })
}

/// Gram of the context-specific preferential kernel.
pub fn cgpm_gram(k: &DMatrix<f64>, k_ctx: &DMatrix<f64>, pairs: &[TrainPair]) -> Result<DMatrix<f64>> {
    if pairs.iter().any(|p| p.context.is_none()) {
        return Err(PrefShapError::Input("every pair needs a context index".into()));
    }
    Ok(par_fill(pairs.len(), |a, b| {
        let (p, q) = (&pairs[a], &pairs[b]);
        k_ctx[(p.context.unwrap(), q.context.unwrap())]
            * (k[(p.left, q.left)] * k[(p.right, q.right)]
                - k[(p.left, q.right)] * k[(p.right, q.left)])
    }))
}

/// Gram of the difference kernel `k(l,l') + k(r,r') - k(l,r') - k(r,l')`.
pub fn upm_gram(k: &DMatrix<f64>, pairs: &[TrainPair]) -> DMatrix<f64> {
    par_fill(pairs.len(), |a, b| {
        let (p, q) = (&pairs[a], &pairs[b]);
        k[(p.left, q.left)] + k[(p.right, q.right)] - k[(p.left, q.right)] - k[(p.right, q.left)]
    })
}

/// A trained preference model. Immutable; carries the item (and context)
/// covariates it was trained on so it can be used on its own.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceModel {
    kind: ModelKind,
    alpha: Vec<f64>,
    train_pairs: Vec<TrainPair>,
    kernel_item: KernelParams,
    kernel_ctx: Option<KernelParams>,
    ridge: f64,
    feature_names: Vec<String>,
    item_ids: Vec<String>,
    items: DMatrix<f64>,
    context_feature_names: Vec<String>,
    context_ids: Vec<String>,
    contexts: Option<DMatrix<f64>>,
    split_seed: u64,
    training: TrainingSummary,
    /// `Bᵀ α`: per-item coefficients of the utility for UPM models.
    utility_coef: Vec<f64>,
}

/// One query `(u?, x_left, x_right)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub context: Option<Vec<f64>>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Query {
    pub fn pair(left: Vec<f64>, right: Vec<f64>) -> Self {
        Self {
            context: None,
            left,
            right,
        }
    }

    pub fn with_context(context: Vec<f64>, left: Vec<f64>, right: Vec<f64>) -> Self {
        Self {
            context: Some(context),
            left,
            right,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            context: self.context.clone(),
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

impl PreferenceModel {
    /// Assembles a model from its parts, checking the invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kind: ModelKind,
        alpha: Vec<f64>,
        train_pairs: Vec<TrainPair>,
        items: DMatrix<f64>,
        kernel_item: KernelParams,
        contexts: Option<DMatrix<f64>>,
        kernel_ctx: Option<KernelParams>,
        ridge: f64,
    ) -> Result<Self> {
        let d = items.ncols();
        let n = items.nrows();
        let model = Self {
            kind,
            alpha,
            train_pairs,
            kernel_item,
            kernel_ctx,
            ridge,
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
            item_ids: (0..n).map(|i| i.to_string()).collect(),
            context_feature_names: contexts
                .as_ref()
                .map(|c| (0..c.ncols()).map(|j| format!("u{j}")).collect())
                .unwrap_or_default(),
            context_ids: contexts
                .as_ref()
                .map(|c| (0..c.nrows()).map(|i| i.to_string()).collect())
                .unwrap_or_default(),
            items,
            contexts,
            split_seed: 0,
            training: TrainingSummary::default(),
            utility_coef: Vec::new(),
        };
        model.finish()
    }

    fn finish(mut self) -> Result<Self> {
        check_len("alpha vs training pairs", self.train_pairs.len(), self.alpha.len())?;
        check_len("item kernel dimension", self.items.ncols(), self.kernel_item.dim())?;
        check_len("feature names", self.items.ncols(), self.feature_names.len())?;
        check_len("item ids", self.items.nrows(), self.item_ids.len())?;
        if !(self.ridge > 0.0) {
            return Err(PrefShapError::Input(format!("ridge must be positive, got {}", self.ridge)));
        }
        let n = self.items.nrows();
        let is_cgpm = self.kind == ModelKind::Cgpm;
        if is_cgpm != self.kernel_ctx.is_some() || is_cgpm != self.contexts.is_some() {
            return Err(PrefShapError::Input(
                "context kernel and table must be present exactly for C-GPM models".into(),
            ));
        }
        if let (Some(c), Some(p)) = (&self.contexts, &self.kernel_ctx) {
            check_len("context kernel dimension", c.ncols(), p.dim())?;
            check_len("context feature names", c.ncols(), self.context_feature_names.len())?;
            check_len("context ids", c.nrows(), self.context_ids.len())?;
        }
        let n_ctx = self.contexts.as_ref().map(|c| c.nrows()).unwrap_or(0);
        for (j, p) in self.train_pairs.iter().enumerate() {
            if p.left >= n || p.right >= n {
                return Err(PrefShapError::Input(format!("training pair {j} out of range")));
            }
            match (is_cgpm, p.context) {
                (true, Some(c)) if c < n_ctx => {}
                (false, None) => {}
                _ => {
                    return Err(PrefShapError::Input(format!(
                        "training pair {j} has an invalid context index"
                    )))
                }
            }
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(PrefShapError::Numerical("non-finite dual coefficient".into()));
        }
        let mut coef = vec![0.0; n];
        for (p, a) in self.train_pairs.iter().zip(&self.alpha) {
            coef[p.left] += a;
            coef[p.right] -= a;
        }
        self.utility_coef = coef;
        Ok(self)
    }

    pub fn with_names(
        mut self,
        feature_names: Vec<String>,
        item_ids: Vec<String>,
        context_feature_names: Vec<String>,
        context_ids: Vec<String>,
    ) -> Result<Self> {
        self.feature_names = feature_names;
        self.item_ids = item_ids;
        if self.contexts.is_some() {
            self.context_feature_names = context_feature_names;
            self.context_ids = context_ids;
        }
        self.finish()
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn train_pairs(&self) -> &[TrainPair] {
        &self.train_pairs
    }
    pub fn kernel_item(&self) -> &KernelParams {
        &self.kernel_item
    }
    pub fn kernel_ctx(&self) -> Option<&KernelParams> {
        self.kernel_ctx.as_ref()
    }
    pub fn ridge(&self) -> f64 {
        self.ridge
    }
    pub fn items(&self) -> &DMatrix<f64> {
        &self.items
    }
    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }
    pub fn contexts(&self) -> Option<&DMatrix<f64>> {
        self.contexts.as_ref()
    }
    pub fn context_ids(&self) -> &[String] {
        &self.context_ids
    }
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    pub fn context_feature_names(&self) -> &[String] {
        &self.context_feature_names
    }
    pub fn split_seed(&self) -> u64 {
        self.split_seed
    }
    pub fn training(&self) -> &TrainingSummary {
        &self.training
    }
    pub fn dim(&self) -> usize {
        self.items.ncols()
    }
    pub fn context_dim(&self) -> usize {
        self.contexts.as_ref().map(|c| c.ncols()).unwrap_or(0)
    }
    /// Per-item utility coefficients `c = Bᵀ α`, so that `f(x) = Σ_i c_i k(X_i, x)`.
    pub fn utility_coef(&self) -> &[f64] {
        &self.utility_coef
    }

    /// Kernel columns `k(X_i, q)` for every row `q` of `queries` (n × q).
    pub(crate) fn item_columns(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("query item dimension", self.dim(), queries.ncols())?;
        let bits = vec![true; self.dim()];
        Ok(scaled_gram(
            &self.items,
            queries,
            &bits,
            &self.kernel_item,
            self.kernel_item.signal_variance(),
        ))
    }

    /// Context kernel columns `k_U(U_v, u)` (n_ctx × q).
    pub(crate) fn context_columns(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (ctx, params) = match (&self.contexts, &self.kernel_ctx) {
            (Some(c), Some(p)) => (c, p),
            _ => {
                return Err(PrefShapError::ModelKind {
                    expected: "cgpm",
                    actual: self.kind.name(),
                })
            }
        };
        check_len("query context dimension", ctx.ncols(), queries.ncols())?;
        let bits = vec![true; ctx.ncols()];
        Ok(scaled_gram(ctx, queries, &bits, params, params.signal_variance()))
    }

    /// Score from kernel columns of the two items and, for C-GPM, of the context.
    pub(crate) fn score_columns(&self, kl: &[f64], kr: &[f64], kc: Option<&[f64]>) -> f64 {
        match self.kind {
            ModelKind::Upm => dot(&self.utility_coef, kl) - dot(&self.utility_coef, kr),
            ModelKind::Gpm => {
                let mut s = 0.0;
                for (p, a) in self.train_pairs.iter().zip(&self.alpha) {
                    s += a * (kl[p.left] * kr[p.right] - kr[p.left] * kl[p.right]);
                }
                s
            }
            ModelKind::Cgpm => {
                let kc = kc.expect("context columns required for C-GPM");
                let mut s = 0.0;
                for (p, a) in self.train_pairs.iter().zip(&self.alpha) {
                    let w = a * kc[p.context.unwrap()];
                    s += w * (kl[p.left] * kr[p.right] - kr[p.left] * kl[p.right]);
                }
                s
            }
        }
    }
}

/// Column `j` of a column-major matrix as a slice.
#[inline]
pub(crate) fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn stack_rows(rows: impl Iterator<Item = Vec<f64>>, dim: usize, context: &'static str) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut count = 0;
    for r in rows {
        check_len(context, dim, r.len())?;
        data.extend(r);
        count += 1;
    }
    Ok(DMatrix::from_row_slice(count, dim, &data))
}

/// Preference scores `g(u, x_left, x_right)`; `P(left wins) = σ(g)`.
pub fn predict_g(model: &PreferenceModel, queries: &[Query]) -> Result<Vec<f64>> {
    let d = model.dim();
    let q = queries.len();
    let stacked = stack_rows(
        queries.iter().map(|qr| qr.left.clone()).chain(queries.iter().map(|qr| qr.right.clone())),
        d,
        "query item dimension",
    )?;
    let cols = model.item_columns(&stacked)?;
    let ctx_cols = if model.kind == ModelKind::Cgpm {
        let ctx_rows = queries
            .iter()
            .map(|qr| {
                qr.context.clone().ok_or_else(|| {
                    PrefShapError::Input("C-GPM queries need a context vector".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(model.context_columns(&stack_rows(
            ctx_rows.into_iter(),
            model.context_dim(),
            "query context dimension",
        )?)?)
    } else {
        None
    };
    Ok((0..q)
        .map(|i| {
            model.score_columns(
                col(&cols, i),
                col(&cols, q + i),
                ctx_cols.as_ref().map(|c| col(c, i)),
            )
        })
        .collect())
}

/// Scores for matches that index into `items` (and `contexts` for C-GPM).
pub fn predict_matches(
    model: &PreferenceModel,
    items: &DMatrix<f64>,
    contexts: Option<&DMatrix<f64>>,
    matches: &[Match],
) -> Result<Vec<f64>> {
    let cols = model.item_columns(items)?;
    let ctx_cols = match model.kind {
        ModelKind::Cgpm => {
            let c = contexts.ok_or_else(|| {
                PrefShapError::Config("C-GPM scoring needs a context table".into())
            })?;
            Some(model.context_columns(c)?)
        }
        _ => None,
    };
    matches
        .iter()
        .map(|m| {
            if m.left >= items.nrows() || m.right >= items.nrows() {
                return Err(PrefShapError::Input("match item index out of range".into()));
            }
            let kc = match (&ctx_cols, m.context) {
                (Some(c), Some(v)) if v < c.ncols() => Some(col(c, v)),
                (Some(_), _) => {
                    return Err(PrefShapError::Input("match is missing a valid context index".into()))
                }
                (None, _) => None,
            };
            Ok(model.score_columns(
                col(&cols, m.left),
                col(&cols, m.right),
                kc,
            ))
        })
        .collect()
}

/// Scores for the matches of a dataset.
pub fn predict_dataset(model: &PreferenceModel, ds: &Dataset) -> Result<Vec<f64>> {
    predict_matches(
        model,
        &ds.items.features,
        ds.contexts.as_ref().map(|c| &c.features),
        &ds.matches,
    )
}

/// Latent utility `f(x) = Σ_j α_j (k(x, l_j) - k(x, r_j))` of a UPM at each row of `items`.
pub fn utility(model: &PreferenceModel, items: &DMatrix<f64>) -> Result<DVector<f64>> {
    if model.kind != ModelKind::Upm {
        return Err(PrefShapError::ModelKind {
            expected: "upm",
            actual: model.kind.name(),
        });
    }
    let cols = model.item_columns(items)?;
    Ok(DVector::from_fn(items.nrows(), |i, _| {
        dot(model.utility_coef(), col(&cols, i))
    }))
}

/// Area under the ROC curve of `scores` against labels in `{-1, +1}`, with
/// tied scores counted as one half.
pub fn eval_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_len("auc labels", scores.len(), labels.len())?;
    check_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PrefShapError::Numerical("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|y| **y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PrefShapError::UndefinedMetric(
            "AUC needs at least one label of each class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over runs of tied scores.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// AUC of a model on the matches of a dataset.
pub fn dataset_auc(model: &PreferenceModel, ds: &Dataset) -> Result<f64> {
    eval_auc(&predict_dataset(model, ds)?, &ds.labels())
}

fn item_kernel(ds: &Dataset, cfg: &TrainConfig) -> Result<KernelParams> {
    match &cfg.kernel_item {
        Some(p) => {
            check_len("configured item kernel dimension", ds.items.dim(), p.dim())?;
            Ok(p.clone())
        }
        None => KernelParams::median_heuristic(&ds.items.features).scaled(cfg.lengthscale_scale),
    }
}

fn context_kernel(ds: &Dataset, cfg: &TrainConfig) -> Result<Option<KernelParams>> {
    let Some(ctx) = &ds.contexts else {
        return Ok(None);
    };
    match &cfg.kernel_ctx {
        Some(p) => {
            check_len("configured context kernel dimension", ctx.dim(), p.dim())?;
            Ok(Some(p.clone()))
        }
        None => Ok(Some(
            KernelParams::median_heuristic(&ctx.features).scaled(cfg.context_lengthscale_scale)?,
        )),
    }
}

/// Item Gram (and context Gram when present) for a dataset under given kernels.
struct Grams {
    item: DMatrix<f64>,
    ctx: Option<DMatrix<f64>>,
}

fn grams(ds: &Dataset, kp: &KernelParams, cp: Option<&KernelParams>) -> Grams {
    let x = &ds.items.features;
    let bits = vec![true; kp.dim()];
    let item = scaled_gram(x, x, &bits, kp, kp.signal_variance());
    let ctx = match (&ds.contexts, cp) {
        (Some(c), Some(p)) => {
            let bits = vec![true; p.dim()];
            Some(scaled_gram(&c.features, &c.features, &bits, p, p.signal_variance()))
        }
        _ => None,
    };
    Grams { item, ctx }
}

fn fit_with_grams(
    ds: &Dataset,
    kind: ModelKind,
    cfg: &TrainConfig,
    kp: KernelParams,
    cp: Option<KernelParams>,
    g: &Grams,
) -> Result<PreferenceModel> {
    let pairs: Vec<TrainPair> = match kind {
        ModelKind::Cgpm => ds.matches.iter().map(TrainPair::from).collect(),
        _ => ds
            .matches
            .iter()
            .map(|m| TrainPair {
                context: None,
                ..TrainPair::from(m)
            })
            .collect(),
    };
    let y = ds.labels();
    let fit = match kind {
        ModelKind::Upm => fit_klr_utility(&g.item, &pairs, &y, cfg)?,
        ModelKind::Gpm => fit_klr(&gpm_gram(&g.item, &pairs), &y, cfg)?,
        ModelKind::Cgpm => {
            let kc = g.ctx.as_ref().expect("context gram present for C-GPM");
            fit_klr(&cgpm_gram(&g.item, kc, &pairs)?, &y, cfg)?
        }
    };
    if !fit.converged {
        log::warn!(
            "{kind} training stopped after {} Newton steps with gradient norm {:.3e}",
            fit.iterations,
            fit.gradient_norm
        );
    }
    let (contexts, kernel_ctx) = match kind {
        ModelKind::Cgpm => (ds.contexts.as_ref().map(|c| c.features.clone()), cp),
        _ => (None, None),
    };
    let mut model = PreferenceModel::from_parts(
        kind,
        fit.alpha,
        pairs,
        ds.items.features.clone(),
        kp,
        contexts,
        kernel_ctx,
        cfg.ridge,
    )?;
    model.feature_names = ds.items.names.clone();
    model.item_ids = ds.items.ids.clone();
    if let (ModelKind::Cgpm, Some(c)) = (kind, &ds.contexts) {
        model.context_feature_names = c.names.clone();
        model.context_ids = c.ids.clone();
    }
    model.split_seed = cfg.split_seed;
    model.training = TrainingSummary {
        newton_iterations: fit.iterations,
        converged: fit.converged,
        gradient_norm: fit.gradient_norm,
        objective: *fit.objective_history.last().unwrap(),
    };
    Ok(model)
}

/// Trains a model of the given kind on every match of `data`.
pub fn train_model(data: &Dataset, kind: ModelKind, cfg: &TrainConfig) -> Result<PreferenceModel> {
    cfg.validate()?;
    data.validate()?;
    if data.matches.is_empty() {
        return Err(PrefShapError::Input("no training matches".into()));
    }
    if kind == ModelKind::Cgpm && data.contexts.is_none() {
        return Err(PrefShapError::Config(
            "a C-GPM model needs a context table".into(),
        ));
    }
    let kp = item_kernel(data, cfg)?;
    let cp = if kind == ModelKind::Cgpm {
        context_kernel(data, cfg)?
    } else {
        None
    };
    let g = grams(data, &kp, cp.as_ref());
    fit_with_grams(data, kind, cfg, kp, cp, &g)
}

/// Hyperparameter grid searched by [`tune_model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub ridges: Vec<f64>,
    pub lengthscale_scales: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            ridges: vec![1e-4, 1e-3, 1e-2, 1e-1],
            lengthscale_scales: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub ridge: f64,
    pub lengthscale_scale: f64,
    pub val_auc: f64,
}

/// Grid search over ridge and lengthscale multipliers by validation AUC.
/// Ties keep the earliest grid point. Multipliers apply to the item kernel
/// and, for C-GPM, to the context kernel.
pub fn tune_model(
    train: &Dataset,
    val: &Dataset,
    kind: ModelKind,
    base: &TrainConfig,
    grid: &TuningGrid,
) -> Result<(PreferenceModel, Vec<GridPoint>)> {
    if grid.ridges.is_empty() || grid.lengthscale_scales.is_empty() {
        return Err(PrefShapError::Config("empty tuning grid".into()));
    }
    if kind == ModelKind::Cgpm && train.contexts.is_none() {
        return Err(PrefShapError::Config("a C-GPM model needs a context table".into()));
    }
    let mut best: Option<(f64, PreferenceModel)> = None;
    let mut points = Vec::new();
    for &scale in &grid.lengthscale_scales {
        let mut cfg = base.clone();
        cfg.lengthscale_scale = base.lengthscale_scale * scale;
        cfg.context_lengthscale_scale = base.context_lengthscale_scale * scale;
        cfg.validate()?;
        let kp = item_kernel(train, &cfg)?;
        let cp = if kind == ModelKind::Cgpm {
            context_kernel(train, &cfg)?
        } else {
            None
        };
        let g = grams(train, &kp, cp.as_ref());
        for &ridge in &grid.ridges {
            cfg.ridge = ridge;
            cfg.validate()?;
            let model = fit_with_grams(train, kind, &cfg, kp.clone(), cp.clone(), &g)?;
            let auc = dataset_auc(&model, val)?;
            log::info!("grid point ridge={ridge:e} scale={scale}: validation AUC {auc:.4}");
            points.push(GridPoint {
                ridge,
                lengthscale_scale: cfg.lengthscale_scale,
                val_auc: auc,
            });
            if best.as_ref().is_none_or(|(b, _)| auc > *b) {
                best = Some((auc, model));
            }
        }
    }
    Ok((best.expect("grid is non-empty").1, points))
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    kind: ModelKind,
    alpha: Vec<f64>,
    train_pair_indices: Vec<TrainPair>,
    kernel_item: KernelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_ctx: Option<KernelParams>,
    ridge: f64,
    feature_names: Vec<String>,
    item_ids: Vec<String>,
    items: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    context_feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    context_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contexts: Option<Vec<Vec<f64>>>,
    split_seed: u64,
    #[serde(default)]
    training: TrainingSummary,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], cols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        check_len(what, cols, r.len())?;
        data.extend_from_slice(r);
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols, &data))
}

impl PreferenceModel {
    /// JSON document. Floats are written in shortest round-trip form, so
    /// reading the document back reproduces every value bit for bit.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            alpha: self.alpha.clone(),
            train_pair_indices: self.train_pairs.clone(),
            kernel_item: self.kernel_item.clone(),
            kernel_ctx: self.kernel_ctx.clone(),
            ridge: self.ridge,
            feature_names: self.feature_names.clone(),
            item_ids: self.item_ids.clone(),
            items: rows_of(&self.items),
            context_feature_names: self.context_feature_names.clone(),
            context_ids: self.context_ids.clone(),
            contexts: self.contexts.as_ref().map(rows_of),
            split_seed: self.split_seed,
            training: self.training.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(PrefShapError::Input(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        let d = doc.feature_names.len();
        let items = matrix_of(&doc.items, d, "model item row")?;
        let contexts = doc
            .contexts
            .as_ref()
            .map(|c| matrix_of(c, doc.context_feature_names.len(), "model context row"))
            .transpose()?;
        let model = Self {
            kind: doc.kind,
            alpha: doc.alpha,
            train_pairs: doc.train_pair_indices,
            kernel_item: doc.kernel_item,
            kernel_ctx: doc.kernel_ctx,
            ridge: doc.ridge,
            feature_names: doc.feature_names,
            item_ids: doc.item_ids,
            items,
            context_feature_names: doc.context_feature_names,
            context_ids: doc.context_ids,
            contexts,
            split_seed: doc.split_seed,
            training: doc.training,
            utility_coef: Vec::new(),
        };
        model.finish()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| PrefShapError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::kernel::k_pref;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective_at(g: &DMatrix<f64>, y: &[f64], ridge: f64, alpha: &DVector<f64>) -> f64 {
        klr_objective(&(g * alpha), alpha, y, ridge)
    }

    #[test]
    fn separable_constant_direction() {
        let g = DMatrix::identity(4, 4);
        let y = vec![1.0; 4];
        let fit = fit_klr(&g, &y, &TrainConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.alpha.iter().all(|a| *a > 0.0));
        assert!(fit.alpha.iter().all(|a| sigmoid(*a) > 0.5));
    }

    #[test]
    fn opposite_labels_on_duplicate_pair_give_even_odds() {
        let g = DMatrix::from_element(2, 2, 0.7);
        let fit = fit_klr(&g, &[1.0, -1.0], &TrainConfig::default()).unwrap();
        let f = &g * DVector::from_vec(fit.alpha);
        assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
    }

    #[test]
    fn newton_matches_gradient_descent_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = 6;
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let g = &a * a.transpose() + DMatrix::identity(m, m) * 0.1;
        let y: Vec<f64> = (0..m).map(|j| if j % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let cfg = TrainConfig {
            ridge: 0.5,
            grad_tol: 1e-12,
            ..Default::default()
        };
        let fit = fit_klr(&g, &y, &cfg).unwrap();
        let newton_obj = objective_at(&g, &y, cfg.ridge, &DVector::from_vec(fit.alpha));

        // plain gradient descent in the f-parameterisation is a reference minimiser
        let ginv = g.clone().try_inverse().unwrap();
        let mut f = DVector::<f64>::zeros(m);
        for _ in 0..20000 {
            let alpha = &ginv * &f;
            let grad = DVector::from_fn(m, |j, _| -y[j] * sigmoid(-y[j] * f[j])) + &alpha * cfg.ridge;
            f -= grad * 0.05;
        }
        let reference = objective_at(&g, &y, cfg.ridge, &(&ginv * &f));
        assert!((newton_obj - reference).abs() < 1e-4, "{newton_obj} vs {reference}");
        assert!(newton_obj <= reference + 1e-12);
    }

    #[test]
    fn objective_never_increases() {
        let ds = gen_synthetic(40, 120, 7).unwrap();
        let kp = KernelParams::median_heuristic(&ds.items.features);
        let k = crate::kernel::gram(&ds.items.features, &ds.items.features, &kp).unwrap();
        let pairs: Vec<TrainPair> = ds.matches.iter().map(TrainPair::from).collect();
        let fit = fit_klr(&gpm_gram(&k, &pairs), &ds.labels(), &TrainConfig::default()).unwrap();
        assert!(fit.converged);
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn invalid_labels_are_rejected() {
        let g = DMatrix::identity(2, 2);
        assert!(matches!(
            fit_klr(&g, &[1.0, 0.0], &TrainConfig::default()),
            Err(PrefShapError::Input(_))
        ));
    }

    #[test]
    fn auc_basic_cases() {
        let y = [-1.0, -1.0, 1.0, 1.0];
        assert_eq!(eval_auc(&[0.1, 0.2, 0.3, 0.4], &y).unwrap(), 1.0);
        assert_eq!(eval_auc(&[0.4, 0.3, 0.2, 0.1], &y).unwrap(), 0.0);
        assert_eq!(eval_auc(&[0.5; 4], &y).unwrap(), 0.5);
        assert!(matches!(
            eval_auc(&[0.1, 0.2], &[1.0, 1.0]),
            Err(PrefShapError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 4.0).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            labels[0] = 1.0;
            labels[1] = -1.0;
            let mut count = 0.0;
            let (mut np, mut nn) = (0.0, 0.0);
            for i in 0..n {
                if labels[i] > 0.0 {
                    np += 1.0;
                } else {
                    nn += 1.0;
                }
                for j in 0..n {
                    if labels[i] > 0.0 && labels[j] < 0.0 {
                        count += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            assert_eq!(eval_auc(&scores, &labels).unwrap(), count / (np * nn));
        }
    }

    fn small_model(kind: ModelKind) -> (Dataset, PreferenceModel) {
        let ds = crate::data::gen_context_synthetic(30, 4, 90, 12).unwrap();
        let ds = if kind == ModelKind::Cgpm { ds } else { ds.without_contexts() };
        let model = train_model(&ds, kind, &TrainConfig::default()).unwrap();
        (ds, model)
    }

    #[test]
    fn scores_match_explicit_kernel_loop() {
        let (ds, model) = small_model(ModelKind::Gpm);
        let kp = model.kernel_item().clone();
        let x = &ds.items;
        for (a, b) in [(0, 1), (5, 7), (3, 3)] {
            let mut expect = 0.0;
            for (p, al) in model.train_pairs().iter().zip(model.alpha()) {
                expect += al * k_pref((&x.row(p.left), &x.row(p.right)), (&x.row(a), &x.row(b)), &kp).unwrap();
            }
            let got = predict_g(&model, &[Query::pair(x.row(a), x.row(b))]).unwrap()[0];
            assert!((got - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "{got} vs {expect}");
        }
    }

    #[test]
    fn scores_are_skew_symmetric() {
        for kind in [ModelKind::Upm, ModelKind::Gpm, ModelKind::Cgpm] {
            let (ds, model) = small_model(kind);
            let ctx = ds.contexts.as_ref().map(|c| c.row(1));
            for i in 0..10 {
                let q = Query {
                    context: ctx.clone(),
                    left: ds.items.row(i),
                    right: ds.items.row(i + 10),
                };
                let s = predict_g(&model, &[q.clone(), q.swapped()]).unwrap();
                assert_eq!(s[0], -s[1], "{kind}");
                let same = Query { right: q.left.clone(), ..q };
                if kind != ModelKind::Upm {
                    assert_eq!(predict_g(&model, &[same]).unwrap()[0], 0.0);
                }
            }
        }
    }

    #[test]
    fn utility_differences_equal_scores() {
        let (ds, model) = small_model(ModelKind::Upm);
        let f = utility(&model, &ds.items.features).unwrap();
        for i in 0..20 {
            let j = (i * 7 + 3) % ds.items.len();
            let g = predict_g(&model, &[Query::pair(ds.items.row(i), ds.items.row(j))]).unwrap()[0];
            assert!((f[i] - f[j] - g).abs() <= 1e-10);
        }
        let (_, gpm) = small_model(ModelKind::Gpm);
        assert!(matches!(utility(&gpm, &ds.items.features), Err(PrefShapError::ModelKind { .. })));
    }

    #[test]
    fn utility_path_matches_dense_difference_kernel() {
        let ds = gen_synthetic(25, 50, 31).unwrap();
        let kp = KernelParams::median_heuristic(&ds.items.features);
        let k = crate::kernel::gram(&ds.items.features, &ds.items.features, &kp).unwrap();
        let pairs: Vec<TrainPair> = ds.matches.iter().map(TrainPair::from).collect();
        let y = ds.labels();
        let cfg = TrainConfig {
            ridge: 1e-2,
            grad_tol: 1e-10,
            ..Default::default()
        };
        let g = upm_gram(&k, &pairs);
        let dense = fit_klr(&g, &y, &cfg).unwrap();
        let fast = fit_klr_utility(&k, &pairs, &y, &cfg).unwrap();
        let fd = &g * DVector::from_vec(dense.alpha.clone());
        let ff = &g * DVector::from_vec(fast.alpha.clone());
        let diff = (&fd - &ff).amax();
        assert!(diff < 1e-8, "max diff {diff}, dense {} its {}, fast {} its {}", dense.gradient_norm, dense.iterations, fast.gradient_norm, fast.iterations);
    }

    #[test]
    fn cgpm_requires_contexts() {
        let ds = gen_synthetic(10, 20, 1).unwrap();
        assert!(matches!(
            train_model(&ds, ModelKind::Cgpm, &TrainConfig::default()),
            Err(PrefShapError::Config(_))
        ));
    }

    #[test]
    fn json_roundtrip_is_bit_faithful() {
        for kind in [ModelKind::Upm, ModelKind::Gpm, ModelKind::Cgpm] {
            let (_, model) = small_model(kind);
            let back = PreferenceModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn large_ridge_shrinks_coefficients() {
        let ds = gen_synthetic(30, 100, 5).unwrap();
        let mut norms = Vec::new();
        for ridge in [1e-3, 1.0, 1e3] {
            let cfg = TrainConfig { ridge, ..Default::default() };
            let model = train_model(&ds, ModelKind::Gpm, &cfg).unwrap();
            let s = predict_dataset(&model, &ds).unwrap();
            let spread = s.iter().map(|v| (sigmoid(*v) - 0.5).abs()).fold(0.0, f64::max);
            norms.push((DVector::from_column_slice(model.alpha()).norm(), spread));
        }
        assert!(norms[0].0 > norms[1].0 && norms[1].0 > norms[2].0);
        assert!(norms[0].1 > norms[1].1 && norms[1].1 > norms[2].1);
        assert!(norms[2].1 < 0.01);
    }
}
