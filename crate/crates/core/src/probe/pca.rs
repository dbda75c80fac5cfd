use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::pointcore::{PointCloud, Vec3};
use crate::probe::ply::write_ply;

/// Eigenvalues below this fraction of the largest count as missing rank.
const RANK_TOL: f64 = 1e-10;

/// Per-point RGB from the top three principal components of `features`.
///
/// Each component's sign makes its largest-magnitude loading positive; scores
/// are min-max scaled to `[0, 1]`. Missing or constant components are 0.5.
pub fn pca_colors(features: &Tensor) -> Result<Vec<Vec3>> {
    let [n, c] = features.shape();
    if n < 3 {
        return Err(Error::invalid(format!(
            "pca needs at least 3 rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; c];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, c, |r, j| features.get(r, j) - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut colors = vec![[0.5; 3]; n];
    for (slot, &k) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[k];
        if !(lambda > RANK_TOL * top) || top == 0.0 {
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let scores: Vec<f64> = (0..n)
            .map(|r| centered.row(r).iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for (col, s) in colors.iter_mut().zip(&scores) {
                col[slot] = (s - lo) / (hi - lo);
            }
        }
    }
    Ok(colors)
}

/// Writes the cloud colored by feature PCA as ASCII PLY.
pub fn pca_export(features: &Tensor, cloud: &PointCloud, path: &Path) -> Result<()> {
    if features.rows() != cloud.len() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} points",
            features.rows(),
            cloud.len()
        )));
    }
    write_ply(path, &cloud.coord, &pca_colors(features)?)
}
