//! Sparse evaluation of hierarchical feature vectors `phi(x) = R^-T k(X, x)`.
//!
//! Features are compactly supported: the feature centered at a grid point
//! is nonzero only strictly inside the box `(x_j - 2^-l_j, x_j + 2^-l_j)`
//! per dimension. Evaluation therefore walks levels keeping the single
//! active center per level and per dimension (a binary descent), then
//! combines the per-dimension results per combination block. No pass over
//! all grid positions ever happens; the nonzero count stays
//! polylogarithmic in the grid size.

use std::collections::BTreeMap;

use crate::chol::{dyadic_coefficients, inverse_cholesky_on, LocalCoefficients, SparseUpperTriangular};
use crate::error::{Error, Result};
use crate::grid::{combination_blocks, sparse_grid, DyadicIndex1D, MultiIndex, SparseGridDesign};
use crate::kernel::{MarkovKernel1D, TensorMarkovKernel};

/// Guard below which accumulated entries are dropped as denormal noise.
const DENORMAL_GUARD: f64 = 1e-300;

/// Size guard for the dense reference path.
const DENSE_GUARD: usize = 10_000;

/// Sparse vector of feature values, entries sorted by ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureVector {
    length: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseFeatureVector {
    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `(ordinal, value)` pairs with strictly increasing ordinals.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        assert_eq!(dense.len(), self.length);
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.length];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Sparse feature values together with their input gradients. Entry `e`
/// stores `d` partial derivatives contiguously in `grads[e*d .. (e+1)*d]`.
#[derive(Debug, Clone)]
pub struct SparseFeatureJacobian {
    length: usize,
    dim: usize,
    entries: Vec<(usize, f64)>,
    grads: Vec<f64>,
}

impl SparseFeatureJacobian {
    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    /// Gradient of entry `e` with respect to the input coordinates.
    pub fn grad(&self, e: usize) -> &[f64] {
        &self.grads[e * self.dim..(e + 1) * self.dim]
    }

    pub fn values(&self) -> SparseFeatureVector {
        SparseFeatureVector {
            length: self.length,
            entries: self.entries.clone(),
        }
    }
}

/// Open box outside which the feature centered at `label` vanishes.
#[derive(Debug, Clone)]
pub struct SupportBox {
    label: MultiIndex,
}

impl SupportBox {
    pub fn new(label: MultiIndex) -> Self {
        Self { label }
    }

    pub fn label(&self) -> &MultiIndex {
        &self.label
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.label.axes().iter().map(|a| a.support()).collect()
    }

    /// True only strictly inside the box in every dimension.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.label.axes().iter().zip(x).all(|(a, &xj)| {
            let (lo, hi) = a.support();
            xj > lo && xj < hi
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Active1D {
    label: DyadicIndex1D,
    value: f64,
    deriv: f64,
}

/// Feature evaluator for one Markov kernel over a sorted dyadic set.
#[derive(Debug, Clone)]
pub struct OneDimBasis {
    kernel: MarkovKernel1D,
    level: u32,
    coeffs: Vec<LocalCoefficients>,
}

impl OneDimBasis {
    pub fn new(kernel: MarkovKernel1D, level: u32) -> Result<Self> {
        let coeffs = dyadic_coefficients(&kernel, level)?;
        Ok(Self {
            kernel,
            level,
            coeffs,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn kernel(&self) -> &MarkovKernel1D {
        &self.kernel
    }

    /// The per-level active entries at `x`: at most one per level, none at
    /// levels where `x` coincides with a coarser grid point, none at all
    /// outside the open unit interval. Levels ascend, so positions do too.
    fn active(&self, x: f64) -> Vec<Active1D> {
        let mut out = Vec::with_capacity(self.level as usize);
        for lev in 1..=self.level {
            let Some(label) = DyadicIndex1D::containing(lev, x) else {
                continue;
            };
            let lc = &self.coeffs[label.sorted_position()];
            let mut value = lc.c_center * self.kernel.eval(lc.x_center, x);
            let mut deriv = lc.c_center * self.kernel.eval_dy(lc.x_center, x);
            if let (Some(xl), Some(cl)) = (lc.x_left, lc.c_left) {
                value += cl * self.kernel.eval(xl, x);
                deriv += cl * self.kernel.eval_dy(xl, x);
            }
            if let (Some(xr), Some(cr)) = (lc.x_right, lc.c_right) {
                value += cr * self.kernel.eval(xr, x);
                deriv += cr * self.kernel.eval_dy(xr, x);
            }
            out.push(Active1D {
                label,
                value,
                deriv,
            });
        }
        out
    }

    /// `R^-T k(X*, x)` as a sparse vector of length `2^level - 1`; exactly
    /// one nonzero per level for non-dyadic interior `x`.
    pub fn features(&self, x: f64) -> SparseFeatureVector {
        let entries = self
            .active(x)
            .into_iter()
            .filter(|a| a.value.abs() >= DENORMAL_GUARD)
            .map(|a| (a.label.sorted_position(), a.value))
            .collect();
        SparseFeatureVector {
            length: self.len(),
            entries,
        }
    }
}

/// Feature evaluator for a tensor Markov kernel over a sparse grid,
/// bundling the design, the per-dimension local solves, and the sparse
/// inverse Cholesky factor.
///
/// ```
/// use dtmgp::features::FeatureBasis;
/// use dtmgp::kernel::{MarkovKernel1D, TensorMarkovKernel};
///
/// let kernel = TensorMarkovKernel::isotropic(MarkovKernel1D::laplace(1.0), 2)?;
/// let basis = FeatureBasis::new(kernel, 4)?;
/// assert_eq!(basis.len(), 49);
/// let phi = basis.features(&[0.3, 0.7])?;
/// // far fewer active features than grid points
/// assert!(phi.nnz() <= 16);
/// # Ok::<(), dtmgp::Error>(())
/// ```
#[derive(Debug)]
pub struct FeatureBasis {
    kernel: TensorMarkovKernel,
    level: u32,
    design: SparseGridDesign,
    points: Vec<Vec<f64>>,
    dims: Vec<OneDimBasis>,
    blocks: Vec<(Vec<u32>, f64)>,
    inv_chol: SparseUpperTriangular,
}

impl FeatureBasis {
    pub fn new(kernel: TensorMarkovKernel, level: u32) -> Result<Self> {
        let d = kernel.dim();
        let design = sparse_grid(level, d)?;
        let points = design.points();
        let dims = kernel
            .factors()
            .iter()
            .map(|k| OneDimBasis::new(k.clone(), level))
            .collect::<Result<Vec<_>>>()?;
        let blocks = combination_blocks(level, d);
        let inv_chol = inverse_cholesky_on(&kernel, level, &design)?;
        Ok(Self {
            kernel,
            level,
            design,
            points,
            dims,
            blocks,
            inv_chol,
        })
    }

    pub fn kernel(&self) -> &TensorMarkovKernel {
        &self.kernel
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Number of features (= grid points).
    pub fn len(&self) -> usize {
        self.design.len()
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty()
    }

    pub fn design(&self) -> &SparseGridDesign {
        &self.design
    }

    pub fn grid_points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn inv_chol(&self) -> &SparseUpperTriangular {
        &self.inv_chol
    }

    pub fn support_box(&self, ordinal: usize) -> SupportBox {
        SupportBox::new(self.design.labels()[ordinal].clone())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Structural(format!(
                "input of length {} for a basis of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Sparse `phi(x)`. Inputs with any coordinate outside the open unit
    /// interval have no active supports and yield the empty vector.
    pub fn features(&self, x: &[f64]) -> Result<SparseFeatureVector> {
        self.check_dim(x)?;
        let actives: Vec<Vec<Active1D>> =
            self.dims.iter().zip(x).map(|(b, &xj)| b.active(xj)).collect();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut key = vec![0u64; self.dim()];
        let mut combo = vec![0usize; self.dim()];
        for (block, weight) in &self.blocks {
            let Some(counts) = block_counts(&actives, block) else {
                continue;
            };
            combo.iter_mut().for_each(|c| *c = 0);
            loop {
                let mut value = *weight;
                for (j, &c) in combo.iter().enumerate() {
                    let a = &actives[j][c];
                    value *= a.value;
                    key[j] = a.label.packed();
                }
                let pos = self
                    .design
                    .position_of_key(&key)
                    .expect("block label inside the design");
                *acc.entry(pos).or_insert(0.0) += value;
                if !advance(&mut combo, &counts) {
                    break;
                }
            }
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, v)| v.abs() >= DENORMAL_GUARD)
            .collect();
        Ok(SparseFeatureVector {
            length: self.len(),
            entries,
        })
    }

    /// Sparse `phi(x)` together with the Jacobian `d phi_i / d x_j` on the
    /// same sparsity pattern. At kink abscissae the one-sided derivative
    /// from the left is used.
    pub fn features_with_grad(&self, x: &[f64]) -> Result<SparseFeatureJacobian> {
        self.check_dim(x)?;
        let d = self.dim();
        let actives: Vec<Vec<Active1D>> =
            self.dims.iter().zip(x).map(|(b, &xj)| b.active(xj)).collect();
        struct Acc {
            value: f64,
            grad: Vec<f64>,
        }
        let mut acc: BTreeMap<usize, Acc> = BTreeMap::new();
        let mut key = vec![0u64; d];
        let mut combo = vec![0usize; d];
        let mut prefix = vec![0.0f64; d + 1];
        let mut suffix = vec![0.0f64; d + 1];
        for (block, weight) in &self.blocks {
            let Some(counts) = block_counts(&actives, block) else {
                continue;
            };
            combo.iter_mut().for_each(|c| *c = 0);
            loop {
                prefix[0] = 1.0;
                suffix[d] = 1.0;
                for j in 0..d {
                    let a = &actives[j][combo[j]];
                    prefix[j + 1] = prefix[j] * a.value;
                    key[j] = a.label.packed();
                }
                for j in (0..d).rev() {
                    suffix[j] = suffix[j + 1] * actives[j][combo[j]].value;
                }
                let pos = self
                    .design
                    .position_of_key(&key)
                    .expect("block label inside the design");
                let slot = acc.entry(pos).or_insert_with(|| Acc {
                    value: 0.0,
                    grad: vec![0.0; d],
                });
                slot.value += weight * prefix[d];
                for j in 0..d {
                    slot.grad[j] +=
                        weight * actives[j][combo[j]].deriv * prefix[j] * suffix[j + 1];
                }
                if !advance(&mut combo, &counts) {
                    break;
                }
            }
        }
        let mut entries = Vec::with_capacity(acc.len());
        let mut grads = Vec::with_capacity(acc.len() * d);
        for (pos, slot) in acc {
            if slot.value.abs() < DENORMAL_GUARD
                && slot.grad.iter().all(|g| g.abs() < DENORMAL_GUARD)
            {
                continue;
            }
            entries.push((pos, slot.value));
            grads.extend_from_slice(&slot.grad);
        }
        Ok(SparseFeatureJacobian {
            length: self.len(),
            dim: d,
            entries,
            grads,
        })
    }

    /// Dense reference evaluation `k(x, X) R^-1` through the stored sparse
    /// factor. Guarded to small designs; the sparse path is the product
    /// code path.
    pub fn dense_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if self.len() > DENSE_GUARD {
            return Err(Error::Structural(format!(
                "dense feature evaluation guarded to {DENSE_GUARD} points, design has {}",
                self.len()
            )));
        }
        let kvec: Vec<f64> = self
            .points
            .iter()
            .map(|p| self.kernel.eval_unchecked(x, p))
            .collect();
        Ok(self.inv_chol.transpose_apply(&kvec))
    }
}

/// Per-dimension counts of active entries usable by a block (levels up to
/// the block level); `None` if some dimension has none, in which case the
/// block contributes nothing.
fn block_counts(actives: &[Vec<Active1D>], block: &[u32]) -> Option<Vec<usize>> {
    let mut counts = Vec::with_capacity(block.len());
    for (list, &max_level) in actives.iter().zip(block) {
        let c = list.iter().take_while(|a| a.label.level() <= max_level).count();
        if c == 0 {
            return None;
        }
        counts.push(c);
    }
    Some(counts)
}

fn advance(idx: &mut [usize], radices: &[usize]) -> bool {
    for dim in (0..idx.len()).rev() {
        idx[dim] += 1;
        if idx[dim] < radices[dim] {
            return true;
        }
        idx[dim] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn laplace_basis(theta: f64, d: usize, level: u32) -> FeatureBasis {
        let kernel = TensorMarkovKernel::isotropic(MarkovKernel1D::laplace(theta), d).unwrap();
        FeatureBasis::new(kernel, level).unwrap()
    }

    // Full-precision inputs behind the 4-digit reference points
    // (0.8147, 0.9058) and (0.2785, 0.5469) of the golden vectors.
    const X1: [f64; 2] = [0.814723686393179, 0.905791937075619];
    const X2: [f64; 2] = [0.278498218867048, 0.546881519204984];

    #[test]
    fn one_dim_level1_feature_is_unit_at_center() {
        let basis = OneDimBasis::new(MarkovKernel1D::laplace(1.0), 1).unwrap();
        let phi = basis.features(0.5);
        assert_eq!(phi.entries(), &[(0, 1.0)]);
    }

    #[test]
    fn one_dim_nonzero_count_is_one_per_level() {
        let basis = OneDimBasis::new(MarkovKernel1D::laplace(1.0), 4).unwrap();
        let phi = basis.features(0.3);
        assert_eq!(phi.nnz(), 4);
        assert_eq!(phi.len(), 15);
        // at a level-1 grid point only the level-1 feature survives
        let phi = basis.features(0.5);
        assert_eq!(phi.nnz(), 1);
        // outside the interval everything vanishes
        assert_eq!(basis.features(-0.2).nnz(), 0);
        assert_eq!(basis.features(1.0).nnz(), 0);
    }

    #[test]
    fn one_dim_matches_dense_reference() {
        let kernel = MarkovKernel1D::laplace(1.0);
        let basis = OneDimBasis::new(kernel.clone(), 3).unwrap();
        let tk = TensorMarkovKernel::new(vec![kernel]).unwrap();
        let full = FeatureBasis::new(tk, 3).unwrap();
        for &x in &[0.11, 0.47, 0.5, 0.93] {
            let sparse = basis.features(x).to_dense();
            let dense = full.dense_features(&[x]).unwrap();
            for (a, b) in sparse.iter().zip(&dense) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sg_features_reproduce_reference_vectors() {
        let basis = laplace_basis(1.0, 2, 2);
        let phi = basis.features(&X1).unwrap().to_dense();
        let expect = [0.4865, 0.0, 0.3918, 0.0, 0.3918];
        for (a, b) in phi.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 5e-5);
        }
        let phi = basis.features(&X2).unwrap().to_dense();
        let expect = [0.7646, 0.5291, 0.0, 0.0, 0.0933];
        for (a, b) in phi.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 5e-5);
        }
    }

    #[test]
    fn sg_features_match_dense_on_random_points() {
        let basis = laplace_basis(1.0, 2, 4);
        let mut rng = stream(21, Purpose::Aux, 0);
        for _ in 0..100 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let sparse = basis.features(&x).unwrap().to_dense();
            let dense = basis.dense_features(&x).unwrap();
            for (a, b) in sparse.iter().zip(&dense) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn features_at_grid_points_kill_finer_levels() {
        // at a grid point, every feature of a strictly higher level
        // vanishes in the dense reference
        let basis = laplace_basis(1.0, 1, 4);
        let label = basis.design().labels()[2].clone(); // level-2 point 3/4
        let x = label.point();
        let dense = basis.dense_features(&x).unwrap();
        for (ordinal, other) in basis.design().labels().iter().enumerate() {
            if other.shell() > label.shell() {
                assert!(
                    dense[ordinal].abs() < 1e-12,
                    "feature {ordinal} at level {:?} should vanish, got {:e}",
                    other.levels(),
                    dense[ordinal]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let basis = laplace_basis(1.0, 2, 3);
        let mut rng = stream(22, Purpose::Aux, 1);
        let h = 1e-6;
        let mut checked = 0usize;
        for _ in 0..40 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            // keep away from kinks: dyadic coordinates at level <= 3 are
            // multiples of 1/8
            if x.iter().any(|&xi| (xi * 8.0 - (xi * 8.0).round()).abs() < 1e-3) {
                continue;
            }
            checked += 1;
            let jac = basis.features_with_grad(&x).unwrap();
            for (e, &(ordinal, _)) in jac.entries().iter().enumerate() {
                for j in 0..2 {
                    let mut xp = x;
                    xp[j] += h;
                    let mut xm = x;
                    xm[j] -= h;
                    let fp = basis.features(&xp).unwrap().to_dense()[ordinal];
                    let fm = basis.features(&xm).unwrap().to_dense()[ordinal];
                    let fd = (fp - fm) / (2.0 * h);
                    assert_abs_diff_eq!(jac.grad(e)[j], fd, epsilon = 1e-5);
                }
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn gradient_outside_domain_is_empty() {
        let basis = laplace_basis(1.0, 2, 3);
        let jac = basis.features_with_grad(&[1.2, 0.4]).unwrap();
        assert_eq!(jac.nnz(), 0);
        let phi = basis.features(&[0.4, -0.1]).unwrap();
        assert_eq!(phi.nnz(), 0);
    }

    #[test]
    fn support_boxes_confine_features() {
        // the root feature's box is the whole cube, so check features with
        // interior boxes (positive level sum beyond the root shell)
        let basis = laplace_basis(1.0, 2, 3);
        let mut rng = stream(23, Purpose::Aux, 2);
        for ordinal in [1usize, 3, 9, 16] {
            let support = basis.support_box(ordinal);
            let mut outside_checked = 0;
            while outside_checked < 1000 {
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                if support.contains(&x) {
                    continue;
                }
                outside_checked += 1;
                let dense = basis.dense_features(&x).unwrap();
                assert!(
                    dense[ordinal].abs() < 1e-12,
                    "feature {ordinal} leaked outside its support: {:e}",
                    dense[ordinal]
                );
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let basis = laplace_basis(1.0, 2, 3);
        assert!(basis.features(&[0.3]).is_err());
        assert!(basis.features_with_grad(&[0.3, 0.4, 0.5]).is_err());
    }
}
