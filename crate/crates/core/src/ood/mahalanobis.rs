use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::OodError;

/// Eigenvalues at or below `RCOND · λ_max` are treated as zero.
pub const RCOND: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-9;

/// Mahalanobis metric under the pseudoinverse of a covariance matrix,
/// held in eigen form `Σ⁺ = V diag(1/λ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct MahalanobisMetric {
    /// Columns are the retained eigenvectors.
    basis: DMatrix<f64>,
    inv_eigenvalues: DVector<f64>,
}

impl MahalanobisMetric {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self, OodError> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(OodError::NotSquare {
                rows: n,
                cols: cov.ncols(),
            });
        }
        let scale = cov.amax().max(1.0);
        for i in 0..n {
            for j in i + 1..n {
                let gap = (cov[(i, j)] - cov[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(OodError::NonSymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        if n == 0 {
            return Ok(Self {
                basis: DMatrix::zeros(0, 0),
                inv_eigenvalues: DVector::zeros(0),
            });
        }
        let eig = SymmetricEigen::new(cov.clone());
        let lambda_max = eig.eigenvalues.max();
        let cutoff = RCOND * lambda_max;
        let keep: Vec<usize> = (0..n)
            .filter(|&i| lambda_max > 0.0 && eig.eigenvalues[i] > cutoff)
            .collect();
        let basis = DMatrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
        let inv_eigenvalues =
            DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / eig.eigenvalues[i]));
        Ok(Self {
            basis,
            inv_eigenvalues,
        })
    }

    /// Metric for `diag(variances)`; same cutoff rule as [`Self::new`].
    pub fn diagonal(variances: &[f64]) -> Self {
        let n = variances.len();
        let lambda_max = variances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cutoff = RCOND * lambda_max;
        let keep: Vec<usize> = (0..n)
            .filter(|&i| lambda_max > 0.0 && variances[i] > cutoff)
            .collect();
        let basis = DMatrix::from_fn(n, keep.len(), |r, c| f64::from(u8::from(r == keep[c])));
        let inv_eigenvalues =
            DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / variances[i]));
        Self {
            basis,
            inv_eigenvalues,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Number of retained directions.
    pub fn rank(&self) -> usize {
        self.inv_eigenvalues.len()
    }

    /// `(x − μ)ᵀ Σ⁺ (x − μ)`, never negative.
    pub fn squared(&self, x: &[f64], mean: &[f64]) -> f64 {
        let delta = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
        let proj = self.basis.tr_mul(&delta);
        proj.iter()
            .zip(self.inv_eigenvalues.iter())
            .map(|(p, w)| p * p * w)
            .sum()
    }

    pub fn distance(&self, x: &[f64], mean: &[f64]) -> f64 {
        self.squared(x, mean).sqrt()
    }
}

/// `sqrt((x − μ)ᵀ Σ⁺ (x − μ))`.
pub fn mahalanobis(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64, OodError> {
    Ok(MahalanobisMetric::new(cov)?.distance(x, mean))
}
