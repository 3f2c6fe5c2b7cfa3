//! Cyclic coordinate descent for lasso and elastic net.

use super::{active_set, axpy, dot64, kkt, ConceptWeights, RegressError, RegressionProblem, SolverKind};

/// `sign(z) * max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Minimizes `||y - F w||^2 + lambda ||w||_1`.
pub fn lasso_cd(p: &RegressionProblem, lambda: f64, max_iter: usize, tol: f64) -> Result<ConceptWeights, RegressError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(RegressError::InvalidParameter("lambda must be > 0".into()));
    }
    let mut out = coordinate_descent(p, lambda, 0.0, max_iter, tol);
    out.solver = SolverKind::Lasso;
    out.lambda = Some(lambda);
    Ok(out)
}

/// Minimizes `||y - F w||^2 + lambda1 ||w||_1 + lambda2 ||w||^2`.
pub fn elastic_net_cd(
    p: &RegressionProblem,
    lambda1: f64,
    lambda2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<ConceptWeights, RegressError> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) || (lambda1 == 0.0 && lambda2 == 0.0) {
        return Err(RegressError::InvalidParameter(
            "elastic net needs lambda1, lambda2 >= 0, not both zero".into(),
        ));
    }
    let mut out = coordinate_descent(p, lambda1, lambda2, max_iter, tol);
    out.solver = SolverKind::ElasticNet;
    out.lambda = Some(lambda1);
    out.l2_weight = Some(lambda2);
    Ok(out)
}

/// Starts from `w = 0` and sweeps coordinates in ascending order. After a full
/// sweep that moved something, sweeps repeat over the nonzero coordinates
/// only until they settle, then a full sweep confirms. Convergence requires
/// a full sweep with every change below `tol` and a passing KKT check on a
/// freshly computed residual. If the sweeps stall or run out, an active-set
/// refinement finishes from the last iterate.
fn coordinate_descent(p: &RegressionProblem, l1: f64, l2: f64, max_iter: usize, tol: f64) -> ConceptWeights {
    let k = p.n_features();
    let norms: Vec<f64> = (0..k).map(|j| dot64(p.column(j), p.column(j))).collect();
    let mut w = vec![0.0; k];
    let mut r = p.target().to_vec();
    let kkt_tol = 0.5 * kkt::default_tolerance(l1);
    let all: Vec<usize> = (0..k).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut active_pass = false;
    let mut iterations = 0;
    let mut converged = false;
    #[cfg(debug_assertions)]
    let mut last_objective = p.objective(&w, l1, l2);

    while iterations < max_iter {
        iterations += 1;
        let coords = if active_pass { &active } else { &all };
        let mut max_delta = 0f64;
        for &j in coords {
            if norms[j] == 0.0 {
                continue;
            }
            let col = p.column(j);
            let rho = 2.0 * dot64(col, &r) + 2.0 * norms[j] * w[j];
            let next = soft_threshold(rho, l1) / (2.0 * norms[j] + 2.0 * l2);
            let delta = next - w[j];
            if delta != 0.0 {
                axpy(-delta, col, &mut r);
                w[j] = next;
                max_delta = max_delta.max(delta.abs());
            }
        }

        #[cfg(debug_assertions)]
        {
            let objective = p.objective(&w, l1, l2);
            debug_assert!(
                objective <= last_objective + 1e-10 * (1.0 + last_objective.abs()),
                "objective increased from {last_objective} to {objective}"
            );
            last_objective = objective;
        }

        if active_pass {
            if max_delta < tol {
                active_pass = false;
            }
            continue;
        }
        if max_delta < tol {
            r = p.residual(&w);
            if kkt::max_violation(p, &w, &r, l1, l2) <= kkt_tol {
                converged = true;
            }
            break;
        }
        active = (0..k).filter(|&j| w[j] != 0.0).collect();
        active_pass = !active.is_empty();
    }

    if !converged {
        let refined = active_set::refine(p, w, l1, l2, kkt_tol, max_iter);
        w = refined.w;
        iterations += refined.steps;
        converged = refined.converged;
    }

    let mut out = ConceptWeights::new(w, SolverKind::Lasso);
    out.iterations = iterations;
    out.converged = converged;
    out
}
