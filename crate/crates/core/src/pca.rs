//! Principal component analysis of the feature matrix.
//!
//! Columns are centered and (optionally) z-scored, then the principal axes are
//! taken from a symmetric eigendecomposition. When there are more columns than
//! rows the `n × n` Gram matrix is decomposed instead; it shares the nonzero
//! spectrum with the covariance and is much smaller.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, jacobi_eigen, Matrix};

pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("input has zero total variance")]
    ZeroVariance,
    #[error("dimension mismatch: model has {expected} columns, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("requested {requested} components but the model has {available}")]
    TooManyComponents { requested: usize, available: usize },
    #[error("variance threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PcaError>;

/// Which symmetric matrix the axes were extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Covariance,
    Gram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub standardize: bool,
    pub mean: Vec<f64>,
    /// Per-column standard deviation, 1.0 for constant columns or when not
    /// standardizing.
    pub scale: Vec<f64>,
    /// Principal axes as orthonormal rows, strongest first.
    pub components: Matrix,
    /// Variance captured by each axis.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub n_samples: usize,
    pub route: Route,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Centers and scales rows the same way the model was fitted.
    pub fn standardize_rows(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_features() {
            return Err(PcaError::DimensionMismatch {
                expected: self.n_features(),
                found: x.cols(),
            });
        }
        let mut z = x.clone();
        for i in 0..z.rows() {
            for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(z)
    }

    /// Maps scores back into the standardized feature space.
    pub fn inverse_transform(&self, scores: &Matrix) -> Result<Matrix> {
        let p = scores.cols();
        if p > self.n_components() {
            return Err(PcaError::TooManyComponents {
                requested: p,
                available: self.n_components(),
            });
        }
        let axes = self.components.select_rows(&(0..p).collect::<Vec<_>>());
        Ok(scores.matmul(&axes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Fits principal axes to the rows of `x`.
pub fn pca_fit(x: &Matrix, standardize: bool) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(PcaError::TooFewRows(n));
    }
    if !x.is_finite() {
        return Err(PcaError::NonFinite);
    }

    let mut mean = vec![0.0; d];
    for row in x.row_iter() {
        linalg::axpy(1.0, row, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut scale = vec![1.0; d];
    if standardize {
        let mut ss = vec![0.0; d];
        for row in x.row_iter() {
            for j in 0..d {
                let c = row[j] - mean[j];
                ss[j] += c * c;
            }
        }
        for j in 0..d {
            let sd = (ss[j] / (n - 1) as f64).sqrt();
            // constant columns stay at unit scale; they are all zero after centering
            if sd > 0.0 {
                scale[j] = sd;
            }
        }
    }

    let mut z = x.clone();
    for i in 0..n {
        for (j, v) in z.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) / scale[j];
        }
    }

    let denom = (n - 1) as f64;
    let (route, mut values, mut axes) = if d <= n {
        let mut cov = z.transpose().matmul(&z);
        cov.as_mut_slice().iter_mut().for_each(|v| *v /= denom);
        let eig = jacobi_eigen(&cov, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS);
        (Route::Covariance, eig.values, eig.vectors)
    } else {
        let mut gram = z.matmul_transposed(&z);
        gram.as_mut_slice().iter_mut().for_each(|v| *v /= denom);
        let eig = jacobi_eigen(&gram, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS);
        // v = Zᵀu / sqrt((n-1) λ)
        let zt = z.transpose();
        let mut axes = Matrix::zeros(n, d);
        for k in 0..n {
            let lambda = eig.values[k];
            if lambda <= 0.0 {
                continue;
            }
            let norm = (denom * lambda).sqrt();
            let u = eig.vectors.row(k);
            for j in 0..d {
                axes[(k, j)] = linalg::dot(zt.row(j), u) / norm;
            }
        }
        (Route::Gram, eig.values, axes)
    };

    let total: f64 = (0..d)
        .map(|j| z.row_iter().map(|r| r[j] * r[j]).sum::<f64>() / denom)
        .sum();
    if total <= 0.0 {
        return Err(PcaError::ZeroVariance);
    }

    let lambda_max = values.first().copied().unwrap_or(0.0);
    let max_p = (n - 1).min(d);
    let keep = values
        .iter()
        .take(max_p)
        .take_while(|&&v| v > RANK_TOLERANCE * lambda_max)
        .count();
    values.truncate(keep);
    let mut components = axes.select_rows(&(0..keep).collect::<Vec<_>>());
    orthonormalize_rows(&mut components);
    fix_signs(&mut components);
    axes = components;

    let ratios = values.iter().map(|v| v / total).collect();
    Ok(PcaModel {
        standardize,
        mean,
        scale,
        components: axes,
        explained_variance: values,
        explained_variance_ratio: ratios,
        n_samples: n,
        route,
    })
}

/// Two passes of modified Gram–Schmidt. Cleans up the small loss of
/// orthogonality the Gram route picks up on weak components.
fn orthonormalize_rows(m: &mut Matrix) {
    let (p, d) = m.shape();
    for _ in 0..2 {
        for i in 0..p {
            for k in 0..i {
                let proj = linalg::dot(m.row(i), m.row(k));
                let prev = m.row(k).to_vec();
                linalg::axpy(-proj, &prev, m.row_mut(i));
            }
            let norm = linalg::dot(m.row(i), m.row(i)).sqrt();
            if norm > 0.0 {
                m.row_mut(i).iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    debug_assert_eq!(m.cols(), d);
}

/// Flips each axis so its largest-magnitude entry is positive (first index
/// wins on ties).
fn fix_signs(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Smallest component count whose cumulative explained-variance ratio
/// reaches `threshold`, together with that cumulative ratio.
pub fn select_components(ratios: &[f64], threshold: f64) -> Result<(usize, f64)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PcaError::BadThreshold(threshold));
    }
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        // rounding in the ratios must not push an exact hit to the next axis
        if cum >= threshold - 1e-12 {
            return Ok((i + 1, cum));
        }
    }
    Ok((ratios.len(), cum))
}

/// Projects rows onto the first `p` principal axes.
pub fn pca_transform(model: &PcaModel, x: &Matrix, p: usize) -> Result<Matrix> {
    if p > model.n_components() {
        return Err(PcaError::TooManyComponents {
            requested: p,
            available: model.n_components(),
        });
    }
    let z = model.standardize_rows(x)?;
    let axes = model.components.select_rows(&(0..p).collect::<Vec<_>>());
    Ok(z.matmul_transposed(&axes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_axis_variance() {
        let x = Matrix::from_rows(&[
            [1.0, 2.0, 0.0, 5.0],
            [1.0, 2.0, 3.0, 5.0],
            [1.0, 2.0, -1.0, 5.0],
            [1.0, 2.0, 7.0, 5.0],
        ]);
        for standardize in [false, true] {
            let m = pca_fit(&x, standardize).unwrap();
            assert_eq!(m.n_components(), 1);
            assert!((m.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
            let c = m.components.row(0);
            assert!((c[2] - 1.0).abs() < 1e-12);
            assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12 && c[3].abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_line() {
        // points on y = x: covariance [[v, v],[v, v]] has eigenvector (1,1)/√2
        let xs = [-2.0, -0.5, 0.0, 1.0, 1.5];
        let x = Matrix::from_rows(&xs.iter().map(|&v| [v, v]).collect::<Vec<_>>());
        let m = pca_fit(&x, false).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components[(0, 0)] - r).abs() < 1e-12);
        assert!((m.components[(0, 1)] - r).abs() < 1e-12);
        assert!((m.explained_variance_ratio[0] - 1.0).abs() < 1e-12);

        // scores are √2·(x - mean) under the sign convention
        let mean_x = xs.iter().sum::<f64>() / xs.len() as f64;
        let s = pca_transform(&m, &x, 1).unwrap();
        for (i, &v) in xs.iter().enumerate() {
            assert!((s[(i, 0)] - 2f64.sqrt() * (v - mean_x)).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_row_maps_to_origin() {
        let x = Matrix::from_rows(&[[1.0, 4.0, 2.0], [3.0, 0.0, 1.0], [2.0, 5.0, 7.0], [0.0, 1.0, 3.0]]);
        let m = pca_fit(&x, true).unwrap();
        let mean_row = Matrix::from_rows(&[m.mean.clone()]);
        let s = pca_transform(&m, &mean_row, m.n_components()).unwrap();
        assert!(s.max_abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let one = Matrix::from_rows(&[[1.0, 2.0]]);
        assert!(matches!(pca_fit(&one, true), Err(PcaError::TooFewRows(1))));
        let nan = Matrix::from_rows(&[[1.0, f64::NAN], [0.0, 1.0]]);
        assert!(matches!(pca_fit(&nan, true), Err(PcaError::NonFinite)));
        let flat = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]);
        assert!(matches!(pca_fit(&flat, true), Err(PcaError::ZeroVariance)));

        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 1.0], [0.0, 0.0]]);
        let m = pca_fit(&x, true).unwrap();
        let wrong = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        assert!(matches!(
            pca_transform(&m, &wrong, 1),
            Err(PcaError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            pca_transform(&m, &x, 5),
            Err(PcaError::TooManyComponents { .. })
        ));
    }

    #[test]
    fn component_selection() {
        assert_eq!(select_components(&[0.4179, 0.1804, 0.1021, 0.05], 0.70).unwrap().0, 3);
        let (_, cum) = select_components(&[0.4179, 0.1804, 0.1021, 0.05], 0.70).unwrap();
        assert!((cum - 0.7004).abs() < 1e-12);
        assert_eq!(select_components(&[1.0], 1.0).unwrap(), (1, 1.0));
        assert_eq!(select_components(&[1.0], 0.3).unwrap(), (1, 1.0));
        assert_eq!(select_components(&[0.5, 0.5], 0.5).unwrap().0, 1);
        assert!(select_components(&[0.5, 0.5], 0.0).is_err());
        assert!(select_components(&[0.5, 0.5], 1.5).is_err());
    }

    #[test]
    fn covariance_and_gram_routes_agree() {
        // 6 × 4 goes through the covariance, its 4 × 6 slice through the Gram matrix;
        // compare the Gram route against the covariance route on wide data by
        // padding the same points with zero columns.
        let base = [
            [0.3, -1.2, 2.0, 0.7],
            [1.1, 0.4, -0.3, 0.2],
            [-0.8, 2.2, 0.9, -1.5],
            [0.0, -0.4, 1.4, 0.9],
        ];
        let narrow = Matrix::from_rows(&base);
        let wide = Matrix::from_rows(
            &base
                .iter()
                .map(|r| {
                    let mut v = r.to_vec();
                    v.extend([0.0; 6]);
                    v
                })
                .collect::<Vec<_>>(),
        );
        let a = pca_fit(&narrow, false).unwrap();
        let b = pca_fit(&wide, false).unwrap();
        assert_eq!(a.route, Route::Covariance);
        assert_eq!(b.route, Route::Gram);
        assert_eq!(a.n_components(), b.n_components());
        for k in 0..a.n_components() {
            assert!((a.explained_variance[k] - b.explained_variance[k]).abs() < 1e-10);
            for j in 0..4 {
                assert!((a.components[(k, j)] - b.components[(k, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let x = Matrix::from_rows(&[[1.0, 4.0, 2.0], [3.0, 0.0, 1.0], [2.0, 5.0, 7.0], [0.0, 1.0, 3.0]]);
        assert_eq!(pca_fit(&x, true).unwrap(), pca_fit(&x, true).unwrap());
    }
}
