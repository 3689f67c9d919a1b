//! Small dense helpers for the low-dimensional Gaussians used by the skin
//! model. Matrices are row-major `Vec<f64>` of length `d * d`.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn new(matrix: &[f64], dim: usize) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = matrix[i * dim + j];
                for k in 0..j {
                    sum -= lower[i * dim + k] * lower[j * dim + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    lower[i * dim + i] = sum.sqrt();
                } else {
                    lower[i * dim + j] = sum / lower[j * dim + j];
                }
            }
        }
        Ok(Self { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ln det A = 2 Σ ln L_ii`
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
            * 2.0
    }

    /// Squared Mahalanobis norm `vᵀ A⁻¹ v` via forward substitution.
    pub fn mahalanobis_sq(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut sum = v[i];
            for k in 0..i {
                sum -= self.lower[i * d + k] * z[k];
            }
            z[i] = sum / self.lower[i * d + i];
        }
        z.iter().map(|x| x * x).sum()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.lower[i * d + k] * z[k];
            }
            z[i] = sum / self.lower[i * d + i];
        }
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut sum = z[i];
            for k in i + 1..d {
                sum -= self.lower[k * d + i] * x[k];
            }
            x[i] = sum / self.lower[i * d + i];
        }
        x
    }
}

pub fn trace(matrix: &[f64], dim: usize) -> f64 {
    (0..dim).map(|i| matrix[i * dim + i]).sum()
}
