use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_err, Error, Result};

/// Gaussian fit of a set of feature vectors (unbiased covariance).
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Usage(format!("covariance needs at least 2 vectors, got {n}")));
        }
        let f = rows[0].len();
        if rows.iter().any(|r| r.len() != f) {
            return Err(dim_err!("feature rows have unequal lengths"));
        }
        let m = DMatrix::from_fn(n, f, |i, j| rows[i][j]);
        let mean = DVector::from_fn(f, |j, _| m.column(j).mean());
        let centered = DMatrix::from_fn(n, f, |i, j| m[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        Ok(Self { n, mean, cov })
    }

    /// Statistics given directly (the covariance is symmetrized).
    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(dim_err!("covariance {}x{} vs mean {}", cov.nrows(), cov.ncols(), mean.len()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { n: 0, mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clip to 0.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2))`.
///
/// `Tr (Sa Sb)^(1/2)` is evaluated as `Tr (Sa^(1/2) Sb Sa^(1/2))^(1/2)`, which
/// has the same eigenvalues and stays symmetric.
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(dim_err!("feature dims {} vs {}", a.dim(), b.dim()));
    }
    let diff = &a.mean - &b.mean;
    let ra = psd_sqrt(&a.cov);
    let inner = &ra * &b.cov * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}
