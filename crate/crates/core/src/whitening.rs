//! ZCA whitening of image patches.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result};
use crate::imaging::Patch;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Eigenvalues below this are treated as zero before regularization.
const EIGEN_FLOOR: f64 = 1e-12;

/// Mean vector and symmetric ZCA matrix `U (L + eps I)^(-1/2) U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Vec<f64>,
    /// Row-major `dim x dim`.
    matrix: Vec<f64>,
    epsilon: f64,
}

impl WhiteningTransform {
    /// Reassembles a transform from stored parts.
    pub fn from_parts(mean: Vec<f64>, matrix: Vec<f64>, epsilon: f64) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || matrix.len() != dim * dim {
            return invalid(format!(
                "whitening matrix length {} does not match mean length {dim}",
                matrix.len()
            ));
        }
        if !(epsilon > 0.0) {
            return invalid("whitening epsilon must be positive");
        }
        if mean.iter().chain(&matrix).any(|v| !v.is_finite()) {
            return invalid("non-finite whitening parameters");
        }
        Ok(Self {
            mean,
            matrix,
            epsilon,
        })
    }

    /// Zero mean, identity matrix. Used for filter banks that live in pixel space.
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            mean: vec![0.0; dim],
            matrix,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `matrix * (v - mean)`.
    pub fn apply_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if v.len() != dim {
            return invalid(format!(
                "vector length {} does not match whitening dimension {dim}",
                v.len()
            ));
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self
            .matrix
            .chunks_exact(dim)
            .map(|row| crate::imaging::dot(row, &centered))
            .collect())
    }

    pub fn apply(&self, patch: &Patch) -> Result<Patch> {
        Patch::new(patch.side(), self.apply_vec(patch.data())?)
    }

    /// `matrix^T * v`; pulls a whitened-space direction back to pixel space.
    pub fn transpose_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if v.len() != dim {
            return invalid(format!(
                "vector length {} does not match whitening dimension {dim}",
                v.len()
            ));
        }
        let mut out = vec![0.0; dim];
        for (row, &s) in self.matrix.chunks_exact(dim).zip(v) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += r * s;
            }
        }
        Ok(out)
    }

    /// `max |M - M^T|`.
    pub fn asymmetry(&self) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in i + 1..dim {
                worst = worst.max((self.matrix[i * dim + j] - self.matrix[j * dim + i]).abs());
            }
        }
        worst
    }
}

pub fn fit_zca(patches: &[Patch], epsilon: f64) -> Result<WhiteningTransform> {
    if let Some(first) = patches.first() {
        if patches.iter().any(|p| p.side() != first.side()) {
            return invalid("patches have mixed sides");
        }
    }
    let rows: Vec<&[f64]> = patches.iter().map(Patch::data).collect();
    fit_zca_vectors(&rows, epsilon)
}

/// Fits ZCA on arbitrary equal-length vectors.
pub fn fit_zca_vectors(samples: &[&[f64]], epsilon: f64) -> Result<WhiteningTransform> {
    if samples.len() < 2 {
        return invalid(format!("ZCA needs at least 2 samples, got {}", samples.len()));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return invalid("whitening epsilon must be positive and finite");
    }
    let dim = samples[0].len();
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return invalid("samples must be non-empty and share one length");
    }
    if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return invalid("non-finite sample value");
    }

    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(*s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let centered = DMatrix::from_fn(samples.len(), dim, |i, j| samples[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1.0);
    let eig = SymmetricEigen::new(cov);

    let scale = eig.eigenvalues.map(|l| {
        let l = if l < EIGEN_FLOOR { 0.0 } else { l };
        1.0 / (l + epsilon).sqrt()
    });
    let u = &eig.eigenvectors;
    let zca = u * DMatrix::from_diagonal(&scale) * u.transpose();

    let mut matrix = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            // Exact symmetry; the product above is symmetric up to rounding.
            matrix[i * dim + j] = 0.5 * (zca[(i, j)] + zca[(j, i)]);
        }
    }
    Ok(WhiteningTransform {
        mean,
        matrix,
        epsilon,
    })
}
