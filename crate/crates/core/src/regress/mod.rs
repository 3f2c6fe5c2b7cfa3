//! Concept importance estimation.
//!
//! All solvers work on the objective `||y - F w||^2 + penalty(w)` with no
//! sample-count scaling. Libraries that minimize
//! `(1 / 2n) ||y - F w||^2 + alpha ||w||_1` use `lambda = 2 n alpha` in terms of
//! the `lambda` here, with `n` the embedding dimension.

mod active_set;
mod cd;
mod htp;
pub mod kkt;
mod lstsq;

pub use cd::{elastic_net_cd, lasso_cd, soft_threshold};
pub use htp::htp;
pub use lstsq::{least_squares, similarity_weights};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vecstore::{EmbeddingMatrix, EmbeddingVector};

pub const DEFAULT_LAMBDA: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_HTP_STEP: f64 = 0.5;
pub const DEFAULT_HTP_S: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum RegressError {
    #[error("invalid solver parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: design has {expected}, target has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Design matrix `F` (one column per concept) and target `y`, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    dim: usize,
    columns: Vec<f64>,
    target: Vec<f64>,
}

impl RegressionProblem {
    /// Each stored row of `design` becomes one column of `F`.
    pub fn new(design: &EmbeddingMatrix, target: &EmbeddingVector) -> Result<Self, RegressError> {
        let columns = design.data().iter().map(|&x| x as f64).collect();
        let target = target.values().iter().map(|&x| x as f64).collect();
        Self::from_columns(design.dim(), columns, target)
    }

    /// `columns` holds `K` contiguous columns of length `dim`.
    pub fn from_columns(dim: usize, columns: Vec<f64>, target: Vec<f64>) -> Result<Self, RegressError> {
        if dim == 0 || columns.len() % dim != 0 {
            return Err(RegressError::InvalidParameter(format!(
                "{} design values do not form columns of length {dim}",
                columns.len()
            )));
        }
        if target.len() != dim {
            return Err(RegressError::DimensionMismatch {
                expected: dim,
                actual: target.len(),
            });
        }
        if columns.iter().chain(&target).any(|x| !x.is_finite()) {
            return Err(RegressError::InvalidParameter("non-finite input".into()));
        }
        Ok(Self { dim, columns, target })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_features(&self) -> usize {
        self.columns.len() / self.dim
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.dim..(j + 1) * self.dim]
    }

    pub fn columns(&self) -> &[f64] {
        &self.columns
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Keeps only the listed columns, in the given order.
    pub fn restrict(&self, support: &[usize]) -> Self {
        let mut columns = Vec::with_capacity(support.len() * self.dim);
        for &j in support {
            columns.extend_from_slice(self.column(j));
        }
        Self {
            dim: self.dim,
            columns,
            target: self.target.clone(),
        }
    }

    /// `F w`.
    pub fn predict(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                axpy(wj, self.column(j), &mut out);
            }
        }
        out
    }

    /// `y - F w`.
    pub fn residual(&self, w: &[f64]) -> Vec<f64> {
        let fw = self.predict(w);
        self.target.iter().zip(fw).map(|(y, p)| y - p).collect()
    }

    pub fn squared_error(&self, w: &[f64]) -> f64 {
        self.residual(w).iter().map(|r| r * r).sum()
    }

    /// `||y - F w||^2 + l1 ||w||_1 + l2 ||w||^2`.
    pub fn objective(&self, w: &[f64], l1: f64, l2: f64) -> f64 {
        let l1_norm: f64 = w.iter().map(|x| x.abs()).sum();
        let l2_sq: f64 = w.iter().map(|x| x * x).sum();
        self.squared_error(w) + l1 * l1_norm + l2 * l2_sq
    }
}

#[inline]
pub(crate) fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Lasso,
    ElasticNet,
    Htp,
    LeastSquares,
    Similarity,
}

/// Importance weights for the candidate concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptWeights {
    pub w: Vec<f64>,
    pub nonzero_count: usize,
    pub solver: SolverKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl ConceptWeights {
    pub(crate) fn new(w: Vec<f64>, solver: SolverKind) -> Self {
        let nonzero_count = count_nonzero(&w);
        Self {
            w,
            nonzero_count,
            solver,
            lambda: None,
            l2_weight: None,
            s: None,
            iterations: 0,
            converged: true,
        }
    }

    /// Replaces the weight vector, keeping `nonzero_count` exact.
    pub fn set_weights(&mut self, w: Vec<f64>) {
        self.nonzero_count = count_nonzero(&w);
        self.w = w;
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Positions of nonzero weights.
    pub fn support(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&j| self.w[j] != 0.0).collect()
    }
}

pub fn count_nonzero(w: &[f64]) -> usize {
    w.iter().filter(|&&x| x != 0.0).count()
}

/// Solver choice with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solver {
    Lasso { lambda: f64 },
    ElasticNet { lambda1: f64, lambda2: f64 },
    Htp { s: usize, step: f64 },
    LeastSquares,
    Similarity,
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Lasso { lambda: DEFAULT_LAMBDA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub solver: Solver,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solver: Solver::default(),
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

impl SolverConfig {
    pub fn lasso(lambda: f64) -> Self {
        Self {
            solver: Solver::Lasso { lambda },
            ..Self::default()
        }
    }

    pub fn with_solver(solver: Solver) -> Self {
        Self {
            solver,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RegressError> {
        let bad = |m: &str| Err(RegressError::InvalidParameter(m.to_string()));
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1");
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad("tol must be positive");
        }
        match self.solver {
            Solver::Lasso { lambda } if !(lambda.is_finite() && lambda > 0.0) => bad("lambda must be > 0"),
            Solver::ElasticNet { lambda1, lambda2 }
                if !(lambda1.is_finite() && lambda2.is_finite() && lambda1 >= 0.0 && lambda2 >= 0.0)
                    || (lambda1 == 0.0 && lambda2 == 0.0) =>
            {
                bad("elastic net needs lambda1, lambda2 >= 0, not both zero")
            }
            Solver::Htp { s, step } if s == 0 || !(step.is_finite() && step > 0.0) => bad("htp needs s >= 1 and step > 0"),
            _ => Ok(()),
        }
    }

    /// Runs the configured solver. HTP's `s` is capped at the number of
    /// candidate columns.
    pub fn solve(&self, p: &RegressionProblem) -> Result<ConceptWeights, RegressError> {
        self.validate()?;
        Ok(match self.solver {
            Solver::Lasso { lambda } => lasso_cd(p, lambda, self.max_iter, self.tol)?,
            Solver::ElasticNet { lambda1, lambda2 } => elastic_net_cd(p, lambda1, lambda2, self.max_iter, self.tol)?,
            Solver::Htp { s, step } => htp(p, s.min(p.n_features()).max(1), step, self.max_iter)?,
            Solver::LeastSquares => least_squares(p),
            Solver::Similarity => similarity_weights(p),
        })
    }
}
