//! Minimum-norm least squares and the cosine-similarity baseline.

use nalgebra::{DMatrix, DVector};

use super::{dot64, ConceptWeights, RegressionProblem, SolverKind};

/// Minimum-norm solution of `min ||y - F w||` through an SVD. Singular values
/// below `eps * max(d, K) * sigma_max` are treated as zero.
pub(crate) fn min_norm_solve(p: &RegressionProblem) -> Vec<f64> {
    let k = p.n_features();
    if k == 0 {
        return Vec::new();
    }
    let f = DMatrix::from_column_slice(p.dim(), k, p.columns());
    let y = DVector::from_column_slice(p.target());
    let svd = f.svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return vec![0.0; k];
    }
    let cutoff = sigma_max * f64::EPSILON * p.dim().max(k) as f64;
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    let mut w = DVector::<f64>::zeros(k);
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > cutoff {
            let coef = u.column(i).dot(&y) / sigma;
            w += v_t.row(i).transpose() * coef;
        }
    }
    w.iter().copied().collect()
}

/// Unregularized regression; returns the minimum-norm solution when the
/// design is rank deficient or has more columns than rows.
pub fn least_squares(p: &RegressionProblem) -> ConceptWeights {
    ConceptWeights::new(min_norm_solve(p), SolverKind::LeastSquares)
}

/// `w_j = cos(y, F_j)`; zero columns get weight 0.
pub fn similarity_weights(p: &RegressionProblem) -> ConceptWeights {
    let y_norm = dot64(p.target(), p.target()).sqrt();
    let w = (0..p.n_features())
        .map(|j| {
            let col = p.column(j);
            let denom = y_norm * dot64(col, col).sqrt();
            if denom > 0.0 {
                dot64(col, p.target()) / denom
            } else {
                0.0
            }
        })
        .collect();
    ConceptWeights::new(w, SolverKind::Similarity)
}
