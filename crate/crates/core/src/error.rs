use thiserror::Error;

pub type Result<T> = std::result::Result<T, PrefShapError>;

#[derive(Debug, Error)]
pub enum PrefShapError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("cholesky decomposition failed: matrix is not positive definite (pivot {pivot})")]
    Decomposition { pivot: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("conjugate gradient diverged on system {system} (residual grew from {initial:.3e} to {current:.3e})")]
    Divergence {
        system: usize,
        initial: f64,
        current: f64,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("operation requires a {expected} model, got {actual}")]
    ModelKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("under-determined Shapley regression ({0}); sample more coalitions")]
    UnderDetermined(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PrefShapError {
    /// True for failures that come from the numerics rather than from the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PrefShapError::Decomposition { .. }
                | PrefShapError::Numerical(_)
                | PrefShapError::Divergence { .. }
                | PrefShapError::UnderDetermined(_)
        )
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(PrefShapError::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
