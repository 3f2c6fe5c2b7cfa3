use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use super::MetricsError;
use crate::vecstore::EmbeddingMatrix;

/// Pooled variance at or below this counts as degenerate.
const MIN_VARIANCE: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    /// Per group, one `[pc1, pc2]` pair per input row.
    pub groups: Vec<(String, Vec<[f64; 2]>)>,
    /// Variance along each component.
    pub variances: [f64; 2],
}

/// Projects every group onto the top two principal components of the pooled,
/// mean-centered rows. Each component's largest-magnitude loading is positive.
pub fn pca2d(groups: &[(&str, &EmbeddingMatrix)]) -> Result<Pca2d, MetricsError> {
    let total: usize = groups.iter().map(|(_, m)| m.count()).sum();
    if total < 2 {
        return Err(MetricsError::InvalidParameter("pca needs at least two points".into()));
    }
    let d = groups[0].1.dim();
    if let Some((_, m)) = groups.iter().find(|(_, m)| m.dim() != d) {
        return Err(MetricsError::DimensionMismatch(d, m.dim()));
    }
    let mut mean = vec![0f64; d];
    for (_, m) in groups {
        for row in m.rows() {
            for (a, &v) in mean.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
    }
    mean.iter_mut().for_each(|a| *a /= total as f64);
    let mut x = DMatrix::<f64>::zeros(total, d);
    let mut r = 0;
    for (_, m) in groups {
        for row in m.rows() {
            for c in 0..d {
                x[(r, c)] = row[c] as f64 - mean[c];
            }
            r += 1;
        }
    }
    let cov = x.transpose() * &x / (total - 1) as f64;
    if cov.trace() <= MIN_VARIANCE {
        return Err(MetricsError::DegenerateVariance);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::with_capacity(2);
    for &i in order.iter().take(2) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = (0..v.len())
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    let variances = [
        eig.eigenvalues[order[0]].max(0.0),
        order.get(1).map_or(0.0, |&i| eig.eigenvalues[i].max(0.0)),
    ];
    let mut out = Vec::with_capacity(groups.len());
    let mut r = 0;
    for (name, m) in groups {
        let mut coords = Vec::with_capacity(m.count());
        for _ in 0..m.count() {
            let row = x.row(r);
            let p = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            coords.push([p(&axes[0]), p(&axes[1])]);
            r += 1;
        }
        out.push((name.to_string(), coords));
    }
    Ok(Pca2d { groups: out, variances })
}

/// Columns: `group,index,pc1,pc2`.
pub fn write_pca_csv<W: Write>(pca: &Pca2d, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "index", "pc1", "pc2"])?;
    for (name, coords) in &pca.groups {
        for (i, c) in coords.iter().enumerate() {
            w.write_record([name.clone(), i.to_string(), c[0].to_string(), c[1].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_points_keep_distances() {
        let pts = [[1.0f32, 2.0, 0.0], [-1.0, 0.5, 0.0], [3.0, -2.0, 0.0], [0.0, 0.0, 0.0]];
        let m = EmbeddingMatrix::new(3, pts.concat(), false).unwrap();
        let pca = pca2d(&[("a", &m)]).unwrap();
        let c = &pca.groups[0].1;
        for i in 0..4 {
            for j in 0..4 {
                let orig: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]) as f64).map(|v| v * v).sum::<f64>().sqrt();
                let proj = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
                assert!((orig - proj).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn collinear_points_have_flat_second_component() {
        let m = EmbeddingMatrix::new(2, vec![0.0, 0.0, 1.0, 2.0, 2.0, 4.0], false).unwrap();
        let pca = pca2d(&[("line", &m)]).unwrap();
        assert!(pca.groups[0].1.iter().all(|c| c[1].abs() < 1e-8));
    }

    #[test]
    fn duplicates_share_coordinates() {
        let a = EmbeddingMatrix::new(2, vec![0.3, 0.1, 0.9, -0.4], false).unwrap();
        let pca = pca2d(&[("a", &a), ("b", &a)]).unwrap();
        assert_eq!(pca.groups[0].1, pca.groups[1].1);
    }

    #[test]
    fn zero_variance_rejected() {
        let m = EmbeddingMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0], false).unwrap();
        assert!(matches!(pca2d(&[("a", &m)]), Err(MetricsError::DegenerateVariance)));
    }
}
