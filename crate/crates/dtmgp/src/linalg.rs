//! Small dense routines backing the exact samplers. The sparse code paths
//! never go through here; these exist so simulators and reference samplers
//! can draw jointly Gaussian vectors from an explicit covariance.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor stored row-major in a flat buffer.
#[derive(Debug, Clone)]
pub(crate) struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factorizes `gram + jitter * I` (row-major, `n x n`). Fails if a
    /// pivot is not strictly positive.
    pub(crate) fn new(mut gram: Vec<f64>, n: usize, jitter: f64) -> Result<Self> {
        assert_eq!(gram.len(), n * n);
        for i in 0..n {
            gram[i * n + i] += jitter;
        }
        for j in 0..n {
            let mut diag = gram[j * n + j];
            for k in 0..j {
                diag -= gram[j * n + k] * gram[j * n + k];
            }
            if !(diag > 0.0) {
                return Err(Error::Numerical(format!(
                    "dense Cholesky broke down at pivot {j}: {diag:e}"
                )));
            }
            let diag = diag.sqrt();
            gram[j * n + j] = diag;
            for i in j + 1..n {
                let mut v = gram[i * n + j];
                for k in 0..j {
                    v -= gram[i * n + k] * gram[j * n + k];
                }
                gram[i * n + j] = v / diag;
            }
        }
        // zero the strict upper triangle so the buffer is exactly L
        for i in 0..n {
            for j in i + 1..n {
                gram[i * n + j] = 0.0;
            }
        }
        Ok(Self { n, l: gram })
    }

    pub(crate) fn order(&self) -> usize {
        self.n
    }

    /// `L v`, which maps i.i.d. standard normals to the target covariance.
    pub(crate) fn lower_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| (0..=i).map(|k| self.l[i * self.n + k] * v[k]).sum())
            .collect()
    }
}
