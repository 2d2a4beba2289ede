//! Single-layer hierarchical expansion of a tensor Markov GP: the
//! finite-rank surrogate `mu + phi(x)^T Z` with standard-normal prior
//! coefficients, coefficient fitting from function values, and the
//! variance-gap diagnostic that certifies convergence of the expansion.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::FeatureBasis;
use crate::kernel::TensorMarkovKernel;
use crate::linalg::DenseCholesky;

/// Guard on exact (dense-Cholesky) joint sampling.
const EXACT_SAMPLER_GUARD: usize = 4000;

/// Expansion coefficients `Z`, one per hierarchical feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionCoefficients(pub Vec<f64>);

impl ExpansionCoefficients {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `m` independent standard-normal coefficients, reproducible per seed.
pub fn sample_prior_coefficients(m: usize, rng: &mut ChaCha8Rng) -> ExpansionCoefficients {
    ExpansionCoefficients((0..m).map(|_| StandardNormal.sample(rng)).collect())
}

/// A tensor Markov GP surrogate over a sparse grid: feature basis, sparse
/// inverse Cholesky factor, and a constant mean.
///
/// ```
/// use dtmgp::expansion::{sample_prior_coefficients, HierarchicalBasis};
/// use dtmgp::kernel::{MarkovKernel1D, TensorMarkovKernel};
/// use dtmgp::rng::{stream, Purpose};
///
/// let kernel = TensorMarkovKernel::isotropic(MarkovKernel1D::laplace(1.0), 1)?;
/// let basis = HierarchicalBasis::new(kernel, 5, 0.0)?;
/// let z = sample_prior_coefficients(basis.len(), &mut stream(7, Purpose::Predictive, 0));
/// let value = basis.evaluate(&z, &[0.37])?;
/// assert!(value.is_finite());
/// # Ok::<(), dtmgp::Error>(())
/// ```
#[derive(Debug)]
pub struct HierarchicalBasis {
    features: FeatureBasis,
    mean: f64,
}

impl HierarchicalBasis {
    pub fn new(kernel: TensorMarkovKernel, level: u32, mean: f64) -> Result<Self> {
        Ok(Self {
            features: FeatureBasis::new(kernel, level)?,
            mean,
        })
    }

    pub fn feature_basis(&self) -> &FeatureBasis {
        &self.features
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Coefficients that make the expansion interpolate the supplied
    /// values at the grid points: `Z = R^-T g`.
    pub fn coefficients_from_samples(&self, g_values: &[f64]) -> Result<ExpansionCoefficients> {
        if g_values.len() != self.len() {
            return Err(Error::Structural(format!(
                "{} grid values supplied for a design of {} points",
                g_values.len(),
                self.len()
            )));
        }
        Ok(ExpansionCoefficients(
            self.features.inv_chol().transpose_apply(g_values),
        ))
    }

    /// `mu + phi(x)^T Z`, at the cost of the sparse feature evaluation.
    pub fn evaluate(&self, coeffs: &ExpansionCoefficients, x: &[f64]) -> Result<f64> {
        if coeffs.len() != self.len() {
            return Err(Error::Structural(format!(
                "{} coefficients for {} features",
                coeffs.len(),
                self.len()
            )));
        }
        let phi = self.features.features(x)?;
        Ok(self.mean + phi.dot(&coeffs.0))
    }

    /// Pointwise L2 error of the expansion: `k(x,x) - |phi(x)|^2`.
    /// Values negative beyond rounding signal a broken factorization.
    pub fn variance_gap(&self, x: &[f64]) -> Result<f64> {
        let phi = self.features.features(x)?;
        let kxx = self.features.kernel().eval(x, x)?;
        let gap = kxx - phi.squared_norm();
        if gap < -1e-10 {
            return Err(Error::Numerical(format!(
                "variance gap {gap:e} at {x:?}; factor is not orthonormal"
            )));
        }
        Ok(gap.max(0.0))
    }

    /// Largest variance gap over a deterministic evaluation lattice
    /// (midpoints of a uniform subdivision, `per_dim` cells per axis).
    pub fn sup_variance_gap(&self, per_dim: usize) -> Result<f64> {
        let d = self.features.dim();
        let mut sup: f64 = 0.0;
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0f64; d];
        loop {
            for (xi, &i) in x.iter_mut().zip(&idx) {
                *xi = (i as f64 + 0.5) / per_dim as f64;
            }
            sup = sup.max(self.variance_gap(&x)?);
            let mut dim = d;
            let done = loop {
                if dim == 0 {
                    break true;
                }
                dim -= 1;
                idx[dim] += 1;
                if idx[dim] < per_dim {
                    break false;
                }
                idx[dim] = 0;
            };
            if done {
                return Ok(sup);
            }
        }
    }
}

/// Draws an exact joint sample of the GP with the given kernel at the given
/// points, through a dense Cholesky with a small diagonal jitter. Guarded
/// to modest point counts; this is the reference path simulators use.
pub fn sample_exact(
    kernel: &TensorMarkovKernel,
    points: &[Vec<f64>],
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = points.len();
    if n > EXACT_SAMPLER_GUARD {
        return Err(Error::Structural(format!(
            "exact sampler guarded to {EXACT_SAMPLER_GUARD} points, got {n}"
        )));
    }
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = kernel.eval_unchecked(&points[i], &points[j]);
        }
    }
    let chol = DenseCholesky::new(gram, n, jitter)?;
    let xi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(chol.lower_mul(&xi))
}
