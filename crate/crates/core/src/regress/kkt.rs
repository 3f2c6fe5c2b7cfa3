//! Optimality certificates for the l1/l2-penalized least-squares objective.
//!
//! With `g_j = 2 F_j^T (y - F w) - 2 lambda2 w_j`, a minimizer satisfies
//! `|g_j| <= lambda1` where `w_j = 0` and `g_j = lambda1 sign(w_j)` elsewhere.
//! The residual is always recomputed from scratch here.

use super::{dot64, RegressionProblem};

/// `1e-6 * max(lambda, 1)`.
pub fn default_tolerance(lambda: f64) -> f64 {
    1e-6 * lambda.max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub max_violation: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

pub(crate) fn max_violation(p: &RegressionProblem, w: &[f64], residual: &[f64], l1: f64, l2: f64) -> f64 {
    (0..p.n_features())
        .map(|j| violation(p, w, residual, l1, l2, j))
        .fold(0.0, f64::max)
}

fn violation(p: &RegressionProblem, w: &[f64], residual: &[f64], l1: f64, l2: f64, j: usize) -> f64 {
    let g = 2.0 * dot64(p.column(j), residual) - 2.0 * l2 * w[j];
    if w[j] == 0.0 {
        (g.abs() - l1).max(0.0)
    } else {
        (g - l1 * w[j].signum()).abs()
    }
}

/// Checks the elastic-net optimality conditions at `w`.
pub fn verify_elastic_net(p: &RegressionProblem, w: &[f64], l1: f64, l2: f64, tolerance: f64) -> KktReport {
    let residual = p.residual(w);
    let mut worst = None;
    let mut max = 0.0;
    for j in 0..p.n_features() {
        let v = violation(p, w, &residual, l1, l2, j);
        if v > max {
            max = v;
            worst = Some(j);
        }
    }
    KktReport {
        max_violation: max,
        worst_index: worst,
        tolerance,
        passed: max <= tolerance,
    }
}

/// Checks the lasso optimality conditions at the default tolerance.
pub fn verify_lasso(p: &RegressionProblem, w: &[f64], lambda: f64) -> KktReport {
    verify_elastic_net(p, w, lambda, 0.0, default_tolerance(lambda))
}
