//! Product kernels over feature subsets and the preferential kernels built on them.
//!
//! Every base kernel here is a product of per-dimension squared-exponential
//! factors `exp(-(x_j - x'_j)^2 / (2 l_j^2))` scaled once by the signal variance.
//! Restricting the product to a [`CoalitionMask`] gives the sub-product kernel
//! `k_S`; the empty coalition gives the constant `signal_variance`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, PrefShapError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

/// Hyperparameters of a product squared-exponential kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    lengthscales: Vec<f64>,
    signal_variance: f64,
    feature_kinds: Vec<FeatureKind>,
}

impl KernelParams {
    pub fn new(
        lengthscales: Vec<f64>,
        signal_variance: f64,
        feature_kinds: Vec<FeatureKind>,
    ) -> Result<Self> {
        check_len("kernel feature kinds", lengthscales.len(), feature_kinds.len())?;
        if let Some(bad) = lengthscales.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(PrefShapError::Input(format!(
                "lengthscales must be positive and finite, got {bad}"
            )));
        }
        if !(signal_variance > 0.0) || !signal_variance.is_finite() {
            return Err(PrefShapError::Input(format!(
                "signal variance must be positive and finite, got {signal_variance}"
            )));
        }
        Ok(Self {
            lengthscales,
            signal_variance,
            feature_kinds,
        })
    }

    /// Unit lengthscales, unit variance, all dimensions continuous.
    pub fn unit(dim: usize) -> Self {
        Self {
            lengthscales: vec![1.0; dim],
            signal_variance: 1.0,
            feature_kinds: vec![FeatureKind::Continuous; dim],
        }
    }

    /// Per-dimension median heuristic: the lengthscale of column `j` is the
    /// median absolute pairwise difference of that column.
    ///
    /// Columns whose median difference is zero (sparse one-hot columns, constant
    /// columns) fall back to the mean of the non-zero differences, or 1.0 when
    /// there are none. Columns holding only 0/1 values are tagged binary.
    pub fn median_heuristic(x: &DMatrix<f64>) -> Self {
        const MAX_ROWS: usize = 1000;
        let n = x.nrows().min(MAX_ROWS);
        let d = x.ncols();
        let mut lengthscales = Vec::with_capacity(d);
        let mut kinds = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| x[(i, j)]).collect();
            let binary = !col.is_empty() && col.iter().all(|v| *v == 0.0 || *v == 1.0);
            kinds.push(if binary {
                FeatureKind::Binary
            } else {
                FeatureKind::Continuous
            });
            let mut diffs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for a in 0..n {
                for b in (a + 1)..n {
                    diffs.push((col[a] - col[b]).abs());
                }
            }
            lengthscales.push(median_or_fallback(&mut diffs));
        }
        Self {
            lengthscales,
            signal_variance: 1.0,
            feature_kinds: kinds,
        }
    }

    /// Copy with every lengthscale multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.lengthscales.iter().map(|l| l * factor).collect(),
            self.signal_variance,
            self.feature_kinds.clone(),
        )
    }

    pub fn with_signal_variance(&self, signal_variance: f64) -> Result<Self> {
        Self::new(
            self.lengthscales.clone(),
            signal_variance,
            self.feature_kinds.clone(),
        )
    }

    /// Parameters for two stacked copies of the feature space, `(x ∥ x')`.
    pub fn duplicated(&self) -> Self {
        let mut lengthscales = self.lengthscales.clone();
        lengthscales.extend_from_slice(&self.lengthscales);
        let mut kinds = self.feature_kinds.clone();
        kinds.extend_from_slice(&self.feature_kinds);
        Self {
            lengthscales,
            signal_variance: self.signal_variance,
            feature_kinds: kinds,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    #[inline]
    pub(crate) fn gamma(&self, j: usize) -> f64 {
        let l = self.lengthscales[j];
        0.5 / (l * l)
    }
}

fn median_or_fallback(diffs: &mut [f64]) -> f64 {
    if diffs.is_empty() {
        return 1.0;
    }
    diffs.sort_by(|a, b| a.total_cmp(b));
    let mid = diffs.len() / 2;
    let median = if diffs.len().is_multiple_of(2) {
        0.5 * (diffs[mid - 1] + diffs[mid])
    } else {
        diffs[mid]
    };
    if median > 0.0 {
        return median;
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|v| *v > 0.0).collect();
    if nonzero.is_empty() {
        1.0
    } else {
        nonzero.iter().sum::<f64>() / nonzero.len() as f64
    }
}

/// A subset `S` of feature indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoalitionMask {
    bits: Vec<bool>,
    cardinality: usize,
}

impl CoalitionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        let cardinality = bits.iter().filter(|b| **b).count();
        Self { bits, cardinality }
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(vec![false; dim])
    }

    pub fn full(dim: usize) -> Self {
        Self::new(vec![true; dim])
    }

    pub fn from_indices(dim: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; dim];
        for &j in indices {
            if j >= dim {
                return Err(PrefShapError::Input(format!(
                    "feature index {j} out of range for dimension {dim}"
                )));
            }
            bits[j] = true;
        }
        Ok(Self::new(bits))
    }

    /// Base-2 expansion of `value`: repeatedly set bit `floor(log2 r)` and
    /// subtract that power of two from the remainder `r`.
    pub fn from_integer(value: u64, dim: usize) -> Result<Self> {
        let mut bits = vec![false; dim];
        let mut rest = value;
        while rest > 0 {
            let idx = (63 - rest.leading_zeros()) as usize;
            if idx >= dim {
                return Err(PrefShapError::Input(format!(
                    "integer {value} does not fit in {dim} bits"
                )));
            }
            bits[idx] = true;
            rest -= 1u64 << idx;
        }
        Ok(Self::new(bits))
    }

    pub fn to_integer(&self) -> Result<u64> {
        if self.bits.len() > 64 {
            return Err(PrefShapError::Capacity(format!(
                "cannot encode a {}-bit coalition in 64 bits",
                self.bits.len()
            )));
        }
        Ok(self
            .bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| 1u64 << i)
            .sum())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality == 0
    }

    pub fn is_full(&self) -> bool {
        self.cardinality == self.bits.len()
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn contains(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self::new(self.bits.iter().map(|b| !b).collect())
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i)
    }
}

/// `k_S(x_S, x'_S)`: the product kernel restricted to the dimensions in `coalition`.
pub fn k_sub(x: &[f64], x2: &[f64], coalition: &CoalitionMask, params: &KernelParams) -> Result<f64> {
    check_len("k_sub left input", params.dim(), x.len())?;
    check_len("k_sub right input", params.dim(), x2.len())?;
    check_len("k_sub coalition", params.dim(), coalition.len())?;
    Ok(params.signal_variance * factor_product(x, x2, coalition.bits(), params))
}

/// The unrestricted product kernel `k(x, x')`.
pub fn k_full(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    check_len("kernel left input", params.dim(), x.len())?;
    check_len("kernel right input", params.dim(), x2.len())?;
    Ok(params.signal_variance * factor_product_all(x, x2, params))
}

#[inline]
fn factor_product(x: &[f64], x2: &[f64], bits: &[bool], params: &KernelParams) -> f64 {
    let mut exponent = 0.0;
    for j in 0..bits.len() {
        if bits[j] {
            let diff = x[j] - x2[j];
            exponent += diff * diff * params.gamma(j);
        }
    }
    (-exponent).exp()
}

#[inline]
fn factor_product_all(x: &[f64], x2: &[f64], params: &KernelParams) -> f64 {
    let mut exponent = 0.0;
    for j in 0..x.len() {
        let diff = x[j] - x2[j];
        exponent += diff * diff * params.gamma(j);
    }
    (-exponent).exp()
}

/// Gram matrix of `k_S` between the rows of `x` and the rows of `x2`.
pub fn gram_sub(
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    coalition: &CoalitionMask,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    check_len("gram_sub left columns", params.dim(), x.ncols())?;
    check_len("gram_sub right columns", params.dim(), x2.ncols())?;
    check_len("gram_sub coalition", params.dim(), coalition.len())?;
    Ok(scaled_gram(x, x2, coalition.bits(), params, params.signal_variance))
}

/// Gram matrix of the full product kernel.
pub fn gram(x: &DMatrix<f64>, x2: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    gram_sub(x, x2, &CoalitionMask::full(params.dim()), params)
}

/// Kernel vector `k(X_i, x)` over the rows of `x`.
pub fn kernel_column(x: &DMatrix<f64>, point: &[f64], params: &KernelParams) -> Result<DVector<f64>> {
    check_len("kernel_column columns", params.dim(), x.ncols())?;
    check_len("kernel_column point", params.dim(), point.len())?;
    let rows = x.nrows();
    let mut out = DVector::zeros(rows);
    let mut buf = vec![0.0; params.dim()];
    for i in 0..rows {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = x[(i, j)];
        }
        out[i] = params.signal_variance * factor_product_all(&buf, point, params);
    }
    Ok(out)
}

/// Gram of the per-dimension factor product over `bits`, multiplied by `scale`.
/// Shapes are assumed checked by the caller.
pub(crate) fn scaled_gram(
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    bits: &[bool],
    params: &KernelParams,
    scale: f64,
) -> DMatrix<f64> {
    let active: Vec<(usize, f64)> = bits
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(j, _)| (j, params.gamma(j)))
        .collect();
    let rows = x.nrows();
    let cols = x2.nrows();
    let mut out = DMatrix::<f64>::zeros(rows, cols);
    if rows == 0 || cols == 0 {
        return out;
    }
    // Row-major copies keep the inner loop contiguous.
    let xr: Vec<f64> = row_major(x, &active);
    let x2r: Vec<f64> = row_major(x2, &active);
    let a = active.len();
    let gammas: Vec<f64> = active.iter().map(|(_, g)| *g).collect();
    let fill = |c: usize, col: &mut [f64]| {
        let q = &x2r[c * a..(c + 1) * a];
        for (r, slot) in col.iter_mut().enumerate() {
            let p = &xr[r * a..(r + 1) * a];
            let mut exponent = 0.0;
            for t in 0..a {
                let diff = p[t] - q[t];
                exponent += diff * diff * gammas[t];
            }
            *slot = scale * (-exponent).exp();
        }
    };
    let data = out.as_mut_slice();
    if rows * cols >= 1 << 14 {
        data.par_chunks_mut(rows)
            .enumerate()
            .for_each(|(c, col)| fill(c, col));
    } else {
        data.chunks_mut(rows)
            .enumerate()
            .for_each(|(c, col)| fill(c, col));
    }
    out
}

fn row_major(x: &DMatrix<f64>, active: &[(usize, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.nrows() * active.len());
    for i in 0..x.nrows() {
        for (j, _) in active {
            out.push(x[(i, *j)]);
        }
    }
    out
}

/// Generalised preferential kernel
/// `k_E((a, b), (c, d)) = k(a, c) k(b, d) - k(a, d) k(b, c)`.
pub fn k_pref(
    pair_a: (&[f64], &[f64]),
    pair_b: (&[f64], &[f64]),
    params: &KernelParams,
) -> Result<f64> {
    let (a, b) = pair_a;
    let (c, d) = pair_b;
    Ok(k_full(a, c, params)? * k_full(b, d, params)?
        - k_full(a, d, params)? * k_full(b, c, params)?)
}

/// Context-specific preferential kernel `k_U(u, u') k_E(pair, pair')`.
pub fn k_ctx(
    triple_a: (&[f64], &[f64], &[f64]),
    triple_b: (&[f64], &[f64], &[f64]),
    ctx_params: &KernelParams,
    item_params: &KernelParams,
) -> Result<f64> {
    let (u, a, b) = triple_a;
    let (u2, c, d) = triple_b;
    Ok(k_full(u, u2, ctx_params)? * k_pref((a, b), (c, d), item_params)?)
}
