//! Hard thresholding pursuit.

use super::lstsq::min_norm_solve;
use super::{dot64, ConceptWeights, RegressError, RegressionProblem, SolverKind};

/// Indices of the `s` largest `|u_j|`, ties by ascending index, returned sorted.
fn top_s(u: &[f64], s: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b)));
    order.truncate(s);
    order.sort_unstable();
    order
}

/// Keeps at most `s` nonzero weights. Each iteration takes the gradient step
/// `u = w + step * 2 F^T (y - F w)`, keeps the top-`s` support of `|u|` and
/// refits least squares on it. Stops when the support repeats.
pub fn htp(p: &RegressionProblem, s: usize, step: f64, max_iter: usize) -> Result<ConceptWeights, RegressError> {
    let k = p.n_features();
    if s == 0 || s > k {
        return Err(RegressError::InvalidParameter(format!("htp needs 1 <= s <= {k}, got {s}")));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(RegressError::InvalidParameter("htp step must be > 0".into()));
    }
    let mut w = vec![0.0; k];
    let mut support: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let r = p.residual(&w);
        let u: Vec<f64> = (0..k).map(|j| w[j] + step * 2.0 * dot64(p.column(j), &r)).collect();
        let next = top_s(&u, s);
        if next == support {
            converged = true;
            break;
        }
        let restricted = min_norm_solve(&p.restrict(&next));
        w.iter_mut().for_each(|x| *x = 0.0);
        for (&j, v) in next.iter().zip(restricted) {
            w[j] = v;
        }
        support = next;
    }
    let mut out = ConceptWeights::new(w, SolverKind::Htp);
    out.s = Some(s);
    out.iterations = iterations;
    out.converged = converged;
    Ok(out)
}
