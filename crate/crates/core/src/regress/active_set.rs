//! Sign-constrained active-set refinement (feature-sign search) for the
//! l1/l2-penalized objective, warm-started from a coordinate-descent iterate.

use nalgebra::{DMatrix, DVector};

use super::lstsq::min_norm_solve;
use super::{dot64, kkt, RegressionProblem};

/// Larger supports are left to coordinate descent alone; each step here costs
/// a dense factorization of the support Gram matrix.
pub(crate) const MAX_SUPPORT: usize = 128;

pub(crate) struct Refined {
    pub w: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn refine(p: &RegressionProblem, mut w: Vec<f64>, l1: f64, l2: f64, kkt_tol: f64, max_steps: usize) -> Refined {
    let k = p.n_features();
    let mut objective = p.objective(&w, l1, l2);
    let mut steps = 0;
    while steps < max_steps {
        steps += 1;
        let r = p.residual(&w);
        let g: Vec<f64> = (0..k).map(|j| 2.0 * dot64(p.column(j), &r) - 2.0 * l2 * w[j]).collect();
        if kkt::max_violation(p, &w, &r, l1, l2) <= kkt_tol {
            return Refined { w, steps, converged: true };
        }

        let mut support: Vec<usize> = (0..k).filter(|&j| w[j] != 0.0).collect();
        if support.len() >= MAX_SUPPORT {
            break;
        }
        let mut theta: Vec<f64> = support.iter().map(|&j| sign(w[j])).collect();
        let active_ok = support.iter().all(|&j| (g[j] - l1 * sign(w[j])).abs() <= kkt_tol);
        if active_ok {
            let entering = (0..k)
                .filter(|&j| w[j] == 0.0)
                .max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()).then(b.cmp(&a)));
            let Some(i) = entering else { break };
            let pos = support.partition_point(|&j| j < i);
            support.insert(pos, i);
            theta.insert(pos, sign(g[i]));
        }

        let Some(next) = sign_constrained_step(p, &w, &support, &theta, l1, l2, objective) else {
            break;
        };
        let next_objective = p.objective(&next, l1, l2);
        if next_objective >= objective {
            break;
        }
        w = next;
        objective = next_objective;
    }
    let r = p.residual(&w);
    let converged = kkt::max_violation(p, &w, &r, l1, l2) <= kkt_tol;
    Refined { w, steps, converged }
}

/// Minimizes the smooth quadratic with the l1 term linearized by `theta` over
/// `support`, then line-searches from `w` toward that minimizer, stopping at
/// each sign change. Returns the best point if it improves `objective`.
fn sign_constrained_step(
    p: &RegressionProblem,
    w: &[f64],
    support: &[usize],
    theta: &[f64],
    l1: f64,
    l2: f64,
    objective: f64,
) -> Option<Vec<f64>> {
    let m = support.len();
    let restricted = p.restrict(support);
    let gram = DMatrix::from_fn(m, m, |a, b| {
        dot64(restricted.column(a), restricted.column(b)) + if a == b { l2 } else { 0.0 }
    });
    let rhs = DVector::from_fn(m, |a, _| dot64(restricted.column(a), p.target()) - 0.5 * l1 * theta[a]);
    let current: Vec<f64> = support.iter().map(|&j| w[j]).collect();

    let target = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs).iter().copied().collect::<Vec<f64>>(),
        None => {
            // rank deficient: move along the null space of F_A if the linear
            // term still decreases there, else use the pseudo-inverse
            let null = null_component(&restricted, theta);
            if l2 == 0.0 && null.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-9 {
                let mut dir_end = current.clone();
                let t_max = (0..m)
                    .filter(|&a| current[a] != 0.0 && sign(-null[a]) != sign(current[a]) && null[a] != 0.0)
                    .map(|a| current[a] / null[a])
                    .fold(f64::INFINITY, f64::min);
                if t_max.is_finite() {
                    for a in 0..m {
                        dir_end[a] = current[a] - t_max * null[a];
                    }
                    dir_end
                } else {
                    pinv_solve(&gram, &rhs)
                }
            } else {
                pinv_solve(&gram, &rhs)
            }
        }
    };

    let mut ts: Vec<f64> = (0..m)
        .filter(|&a| current[a] != 0.0 && sign(target[a]) != sign(current[a]))
        .map(|a| current[a] / (current[a] - target[a]))
        .filter(|t| *t > 0.0 && *t < 1.0)
        .collect();
    ts.push(1.0);

    let mut best: Option<(f64, Vec<f64>)> = None;
    for t in ts {
        let mut cand = w.to_vec();
        for a in 0..m {
            let v = current[a] + t * (target[a] - current[a]);
            let crosses = current[a] != 0.0 && sign(v) != sign(current[a]);
            let at_kink = current[a] != 0.0 && (v / current[a]).abs() < 1e-12;
            cand[support[a]] = if crosses || at_kink { 0.0 } else { v };
        }
        let obj = p.objective(&cand, l1, l2);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, cand));
        }
    }
    best.filter(|(b, _)| *b < objective).map(|(_, c)| c)
}

/// `theta - F^+ F theta`: the part of `theta` in the null space of `F`.
fn null_component(restricted: &RegressionProblem, theta: &[f64]) -> Vec<f64> {
    let f_theta = restricted.predict(theta);
    let proj = RegressionProblem::from_columns(restricted.dim(), restricted.columns().to_vec(), f_theta)
        .map(|q| min_norm_solve(&q))
        .unwrap_or_else(|_| vec![0.0; theta.len()]);
    theta.iter().zip(proj).map(|(t, q)| t - q).collect()
}

fn pinv_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Vec<f64> {
    let svd = gram.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = sigma_max * f64::EPSILON * gram.nrows() as f64;
    match svd.solve(rhs, eps) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; rhs.len()],
    }
}
