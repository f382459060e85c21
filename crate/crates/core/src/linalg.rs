//! Small dense helpers shared by the mixture and kernel code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric part `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    symmetrize(a).symmetric_eigen().eigenvalues.min()
}

/// Ratio of extreme eigenvalues of a symmetric matrix (infinite when the
/// smallest is not positive).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let ev = symmetrize(a).symmetric_eigen().eigenvalues;
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Clamps negative eigenvalues to zero.
pub fn floor_eigenvalues(a: &DMatrix<f64>) -> DMatrix<f64> {
    clamp_eigenvalues(a, 0.0)
}

/// Raises every eigenvalue below `min` to `min`, keeping the eigenvectors.
pub fn clamp_eigenvalues(a: &DMatrix<f64>, min: f64) -> DMatrix<f64> {
    let eig = symmetrize(a).symmetric_eigen();
    if eig.eigenvalues.min() >= min {
        return symmetrize(a);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(min)));
    symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// Multivariate normal density with a cached Cholesky factor, evaluated
/// without heap allocation.
#[derive(Debug, Clone)]
pub struct Gaussian {
    dim: usize,
    mean: Vec<f64>,
    /// Row-major lower-triangular factor of the covariance.
    chol: Vec<f64>,
    /// `-(d/2) ln 2π - (1/2) ln det Σ`
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if cov.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: cov.nrows(),
            });
        }
        let l = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("component covariance".into()))?
            .l();
        let log_det: f64 = 2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>();
        let mut chol = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                chol[i * dim + j] = l[(i, j)];
            }
        }
        Ok(Gaussian {
            dim,
            mean: mean.to_vec(),
            chol,
            log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Squared Mahalanobis distance; `work` must hold `dim` entries.
    pub fn mahalanobis_sq(&self, x: &[f64], work: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let mut v = x[i] - self.mean[i] - row.iter().zip(&work[..i]).map(|(l, w)| l * w).sum::<f64>();
            v /= self.chol[i * d + i];
            work[i] = v;
            acc += v * v;
        }
        acc
    }

    pub fn log_pdf(&self, x: &[f64], work: &mut [f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x, work)
    }
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_matches_closed_form() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = Gaussian::new(&[1.0, -1.0], &cov).unwrap();
        let x = [0.5, 0.2];
        let diff = DVector::from_row_slice(&[-0.5, 1.2]);
        let inv = cov.clone().try_inverse().unwrap();
        let maha = (diff.transpose() * &inv * &diff)[(0, 0)];
        let want = -0.5 * (2.0 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + maha);
        let mut w = [0.0; 2];
        assert!((g.log_pdf(&x, &mut w) - want).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn eigen_floor() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert_eq!(min_eigenvalue(&floor_eigenvalues(&a)), 0.0);
        assert_eq!(condition_number(&DMatrix::from_diagonal_element(2, 2, 4.0)), 1.0);
    }
}
