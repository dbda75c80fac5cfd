use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::pointcore::PointCloud;
use crate::probe::ply::{heat_color, write_ply};

/// Default ridge penalty on standardized features.
pub const RIDGE_LAMBDA: f64 = 1e-3;

/// Penalty used instead when there are fewer rows than unknowns.
const UNDERDETERMINED_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReport {
    /// In-sample R² of a ridge fit from features to point height.
    pub r2_height: f64,
    /// Mean in-sample R² over the normal components that vary.
    pub r2_normal: f64,
    pub lambda: f64,
    pub queries: Vec<usize>,
    /// Cosine similarity of every point to each query point.
    pub heatmaps: Vec<Vec<f64>>,
}

/// Standardized design matrix; constant columns become zero.
fn standardize(features: &Tensor) -> DMatrix<f64> {
    let [n, c] = features.shape();
    let mut x = DMatrix::from_fn(n, c, |r, j| features.get(r, j));
    for j in 0..c {
        let mut col = x.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n as f64).sqrt();
        if sd > 0.0 {
            col /= sd;
        } else {
            col.fill(0.0);
        }
    }
    x
}

struct Ridge {
    x: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Ridge {
    fn new(x: DMatrix<f64>, lambda: f64) -> Result<Ridge> {
        let c = x.ncols();
        let gram = x.transpose() * &x + DMatrix::identity(c, c) * lambda;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
        Ok(Ridge { x, chol })
    }

    /// In-sample R² of `y`, or `None` when `y` is constant.
    fn r2(&self, y: &[f64]) -> Option<f64> {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - mean));
        let ss_tot = yc.norm_squared();
        if !(ss_tot > 0.0) {
            return None;
        }
        let w = self.chol.solve(&(self.x.transpose() * &yc));
        let resid = &yc - &self.x * w;
        Some(1.0 - resid.norm_squared() / ss_tot)
    }
}

/// Ridge fits from standardized features to height and to normals, plus
/// cosine-similarity heatmaps for the query points.
pub fn shortcut_diagnostic(
    features: &Tensor,
    cloud: &PointCloud,
    queries: &[usize],
) -> Result<ShortcutReport> {
    shortcut_diagnostic_with(features, cloud, queries, RIDGE_LAMBDA)
}

pub fn shortcut_diagnostic_with(
    features: &Tensor,
    cloud: &PointCloud,
    queries: &[usize],
    lambda: f64,
) -> Result<ShortcutReport> {
    let [n, c] = features.shape();
    if n != cloud.len() {
        return Err(Error::invalid(format!(
            "{n} feature rows for {} points",
            cloud.len()
        )));
    }
    if n < 2 || c == 0 {
        return Err(Error::invalid(
            "shortcut diagnostic needs at least 2 rows and 1 column",
        ));
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= n) {
        return Err(Error::invalid(format!(
            "query {q} out of range for {n} points"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("ridge lambda must be positive"));
    }
    let mut lambda = lambda;
    if n < c + 1 {
        log::warn!("{n} rows for {c} feature columns: under-determined, raising ridge lambda to {UNDERDETERMINED_LAMBDA}");
        lambda = lambda.max(UNDERDETERMINED_LAMBDA);
    }
    let ridge = Ridge::new(standardize(features), lambda)?;
    let z: Vec<f64> = cloud.coord.iter().map(|p| p[2]).collect();
    let r2_height = ridge.r2(&z).unwrap_or(0.0);
    let r2_normal = match &cloud.normal {
        Some(normals) => {
            let fits: Vec<f64> = (0..3)
                .filter_map(|d| ridge.r2(&normals.iter().map(|v| v[d]).collect::<Vec<_>>()))
                .collect();
            if fits.is_empty() {
                0.0
            } else {
                fits.iter().sum::<f64>() / fits.len() as f64
            }
        }
        None => 0.0,
    };
    let norms: Vec<f64> = (0..n)
        .map(|r| features.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let heatmaps = queries
        .iter()
        .map(|&q| {
            let fq = features.row(q);
            (0..n)
                .map(|r| {
                    let d = norms[r] * norms[q];
                    if d > 0.0 {
                        (features
                            .row(r)
                            .iter()
                            .zip(fq)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d)
                            .clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(ShortcutReport {
        r2_height,
        r2_normal,
        lambda,
        queries: queries.to_vec(),
        heatmaps,
    })
}

/// Writes one `heatmap_<query>.ply` per query into `dir`.
pub fn write_heatmaps(
    report: &ShortcutReport,
    cloud: &PointCloud,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report
        .queries
        .iter()
        .zip(&report.heatmaps)
        .map(|(q, h)| {
            let path = dir.join(format!("heatmap_{q}.ply"));
            let colors: Vec<_> = h.iter().map(|&v| heat_color(v)).collect();
            write_ply(&path, &cloud.coord, &colors)?;
            Ok(path)
        })
        .collect()
}
