//! Dense solvers: Cholesky for SPD systems and a batched preconditioned
//! conjugate gradient over many systems sharing one preconditioner.

use faer::linalg::solvers::{Llt, LltError};
use faer::prelude::Solve;
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{PrefShapError, Result};

const SYMMETRY_TOL: f64 = 1e-8;

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
pub struct CholeskyFactor {
    llt: Llt<f64>,
    dim: usize,
}

impl CholeskyFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(PrefShapError::Shape {
                context: "cholesky (square matrix)",
                expected: a.nrows(),
                actual: a.ncols(),
            });
        }
        check_symmetric(a)?;
        let dim = a.nrows();
        let m = Mat::<f64>::from_fn(dim, dim, |i, j| a[(i, j)]);
        Self::from_faer(m)
    }

    /// Factor `a + shift·I` without copying `a` twice.
    pub fn with_shift(a: &DMatrix<f64>, shift: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(PrefShapError::Shape {
                context: "cholesky (square matrix)",
                expected: a.nrows(),
                actual: a.ncols(),
            });
        }
        check_symmetric(a)?;
        let dim = a.nrows();
        let m = Mat::<f64>::from_fn(dim, dim, |i, j| {
            if i == j {
                a[(i, j)] + shift
            } else {
                a[(i, j)]
            }
        });
        Self::from_faer(m)
    }

    pub(crate) fn from_faer(m: Mat<f64>) -> Result<Self> {
        let dim = m.nrows();
        for i in 0..dim {
            if !m[(i, i)].is_finite() {
                return Err(PrefShapError::Numerical(format!(
                    "non-finite diagonal entry at {i}"
                )));
            }
        }
        let llt = m.llt(Side::Lower).map_err(|e| match e {
            LltError::NonPositivePivot { index } => PrefShapError::Decomposition { pivot: index },
        })?;
        Ok(Self { llt, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim {
            return Err(PrefShapError::Shape {
                context: "cholesky solve rhs rows",
                expected: self.dim,
                actual: b.nrows(),
            });
        }
        let rhs = Mat::<f64>::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
        let x = self.llt.solve(&rhs);
        Ok(DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| x[(i, j)]))
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim {
            return Err(PrefShapError::Shape {
                context: "cholesky solve rhs rows",
                expected: self.dim,
                actual: b.len(),
            });
        }
        let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        Ok(DVector::from_fn(b.len(), |i, _| x[(i, 0)]))
    }

    /// Explicit inverse, used to build preconditioners.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.solve(&DMatrix::identity(self.dim, self.dim))
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let (x, y) = (a[(i, j)], a[(j, i)]);
            let scale = x.abs().max(y.abs()).max(1.0);
            if (x - y).abs() > SYMMETRY_TOL * scale {
                return Err(PrefShapError::Input(format!(
                    "matrix is not symmetric at ({i}, {j}): {x} vs {y}"
                )));
            }
        }
    }
    Ok(())
}

/// Solve `A X = B` for symmetric positive definite `A`.
pub fn chol_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    CholeskyFactor::new(a)?.solve(b)
}

/// System matrices of a batch: either one matrix shared by every right-hand
/// side or one matrix per system.
#[derive(Clone, Debug)]
pub enum SystemMatrices {
    Shared(DMatrix<f64>),
    PerSystem(Vec<DMatrix<f64>>),
}

/// A batch of SPD systems `A_i X_i = B_i` with one shared preconditioner
/// `P ≈ A⁻¹`. `None` means the identity preconditioner.
#[derive(Clone, Debug)]
pub struct BatchedSystem {
    matrices: SystemMatrices,
    rhs: Vec<DMatrix<f64>>,
    preconditioner: Option<DMatrix<f64>>,
}

impl BatchedSystem {
    pub fn new(
        matrices: SystemMatrices,
        rhs: Vec<DMatrix<f64>>,
        preconditioner: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let dim = match &matrices {
            SystemMatrices::Shared(a) => {
                check_square(a, "batched system matrix")?;
                a.nrows()
            }
            SystemMatrices::PerSystem(list) => {
                if list.len() != rhs.len() {
                    return Err(PrefShapError::Shape {
                        context: "batched system count",
                        expected: list.len(),
                        actual: rhs.len(),
                    });
                }
                let dim = list.first().map(|a| a.nrows()).unwrap_or(0);
                for a in list {
                    check_square(a, "batched system matrix")?;
                    if a.nrows() != dim {
                        return Err(PrefShapError::Shape {
                            context: "batched system dimension",
                            expected: dim,
                            actual: a.nrows(),
                        });
                    }
                }
                dim
            }
        };
        for b in &rhs {
            if b.nrows() != dim {
                return Err(PrefShapError::Shape {
                    context: "batched rhs rows",
                    expected: dim,
                    actual: b.nrows(),
                });
            }
        }
        if let Some(p) = &preconditioner {
            check_square(p, "preconditioner")?;
            if p.nrows() != dim {
                return Err(PrefShapError::Shape {
                    context: "preconditioner dimension",
                    expected: dim,
                    actual: p.nrows(),
                });
            }
        }
        Ok(Self {
            matrices,
            rhs,
            preconditioner,
        })
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    fn matrix(&self, i: usize) -> &DMatrix<f64> {
        match &self.matrices {
            SystemMatrices::Shared(a) => a,
            SystemMatrices::PerSystem(list) => &list[i],
        }
    }

    fn precondition(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.preconditioner {
            Some(p) => p * r,
            None => r.clone(),
        }
    }
}

fn check_square(a: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(PrefShapError::Shape {
            context,
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    Ok(())
}

/// Solution of one system of a batch, with convergence metadata.
#[derive(Clone, Debug)]
pub struct CgSolution {
    pub solution: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖B - A X‖_F / ‖B‖_F` at exit.
    pub relative_residual: f64,
    /// Relative residual after each iteration.
    pub residual_history: Vec<f64>,
}

pub const DEFAULT_CG_TOL: f64 = 1e-6;
pub const DEFAULT_CG_MAX_ITS: usize = 500;

struct CgState {
    x: DMatrix<f64>,
    r: DMatrix<f64>,
    p: DMatrix<f64>,
    rz: f64,
    rhs_norm: f64,
    iterations: usize,
    active: bool,
    converged: bool,
    history: Vec<f64>,
}

/// Preconditioned conjugate gradient run in lockstep over every system of the
/// batch. Each system's right-hand side block is treated as one vector under
/// the Frobenius inner product, and each system stops on its own relative
/// residual `‖R‖_F / ‖B‖_F ≤ tol`.
pub fn batched_cg(sys: &BatchedSystem, tol: f64, max_its: usize) -> Result<Vec<CgSolution>> {
    if !(tol > 0.0) {
        return Err(PrefShapError::Input(format!("cg tolerance must be positive, got {tol}")));
    }
    let mut states: Vec<CgState> = sys
        .rhs
        .iter()
        .map(|b| {
            let rhs_norm = b.norm();
            let r = b.clone();
            let z = sys.precondition(&r);
            let rz = r.dot(&z);
            CgState {
                x: DMatrix::zeros(b.nrows(), b.ncols()),
                r,
                p: z,
                rz,
                rhs_norm,
                iterations: 0,
                active: rhs_norm > 0.0,
                converged: rhs_norm == 0.0,
                history: Vec::new(),
            }
        })
        .collect();

    for _ in 0..max_its {
        if !states.iter().any(|s| s.active) {
            break;
        }
        states
            .par_iter_mut()
            .enumerate()
            .filter(|(_, s)| s.active)
            .try_for_each(|(i, s)| cg_step(sys, i, s, tol))?;
    }

    Ok(states
        .into_iter()
        .map(|s| {
            let relative_residual = if s.rhs_norm > 0.0 {
                s.r.norm() / s.rhs_norm
            } else {
                0.0
            };
            CgSolution {
                solution: s.x,
                iterations: s.iterations,
                converged: s.converged,
                relative_residual,
                residual_history: s.history,
            }
        })
        .collect())
}

fn cg_step(sys: &BatchedSystem, index: usize, s: &mut CgState, tol: f64) -> Result<()> {
    let a = sys.matrix(index);
    let ap = a * &s.p;
    let curvature = s.p.dot(&ap);
    if !(curvature > 0.0) || !curvature.is_finite() {
        return Err(PrefShapError::Numerical(format!(
            "conjugate gradient lost positive curvature on system {index} ({curvature:e})"
        )));
    }
    let step = s.rz / curvature;
    s.x.zip_apply(&s.p, |x, p| *x += step * p);
    s.r.zip_apply(&ap, |r, a| *r -= step * a);
    s.iterations += 1;

    let res = s.r.norm();
    let rel = res / s.rhs_norm;
    s.history.push(rel);
    if !res.is_finite() || res > 10.0 * s.rhs_norm {
        return Err(PrefShapError::Divergence {
            system: index,
            initial: s.rhs_norm,
            current: res,
        });
    }
    if rel <= tol {
        s.active = false;
        s.converged = true;
        return Ok(());
    }
    let z = sys.precondition(&s.r);
    let rz_new = s.r.dot(&z);
    let beta = rz_new / s.rz;
    s.p *= beta;
    s.p += z;
    s.rz = rz_new;
    Ok(())
}
