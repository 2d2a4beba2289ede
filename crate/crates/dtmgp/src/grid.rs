//! Sorted dyadic point sets, full grids, and hyperbolic-cross sparse grids.
//!
//! Points live on the open unit cube and are addressed exactly by
//! `(level, odd offset)` dyadic labels rather than floating coordinates, so
//! grid membership and cross-grid position lookups never involve epsilon
//! comparisons. The orderings produced here are load-bearing: the sparse
//! inverse-Cholesky construction and the sparse feature evaluation both
//! assume level-shell order (all points of a lower level sum come first),
//! with blocks inside a shell enumerated in a fixed deterministic order.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Label of a one-dimensional dyadic point `offset * 2^-level` with
/// `offset` odd, which identifies the point uniquely across levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicIndex1D {
    level: u32,
    offset: u64,
}

impl DyadicIndex1D {
    pub fn new(level: u32, offset: u64) -> Result<Self> {
        if level == 0 {
            return Err(Error::Structural("dyadic level must be >= 1".into()));
        }
        if level > 52 {
            return Err(Error::Structural(format!(
                "dyadic level {level} exceeds the representable range"
            )));
        }
        if offset % 2 == 0 || offset >= (1u64 << level) {
            return Err(Error::Structural(format!(
                "offset {offset} is not an odd integer below 2^{level}"
            )));
        }
        Ok(Self { level, offset })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Coordinate of the point, exact in f64 for levels up to 52.
    pub fn value(&self) -> f64 {
        self.offset as f64 * 2f64.powi(-(self.level as i32))
    }

    /// Open interval `(x - 2^-level, x + 2^-level)` outside which every
    /// hierarchical feature centered at this point vanishes.
    pub fn support(&self) -> (f64, f64) {
        let h = 2f64.powi(-(self.level as i32));
        (self.value() - h, self.value() + h)
    }

    /// Position of this point in the level-sorted dyadic list. The sorted
    /// list of any level `l >= self.level` has this point at the same
    /// position, which is what makes per-dimension results reusable across
    /// blocks.
    pub fn sorted_position(&self) -> usize {
        ((1u64 << (self.level - 1)) - 1 + (self.offset - 1) / 2) as usize
    }

    /// Closest grid point below, i.e. `x - 2^-level` reduced to its own
    /// (lower) level. `None` means the neighbor is the domain boundary and
    /// the factorization treats it as -infinity.
    pub fn left_neighbor(&self) -> Option<DyadicIndex1D> {
        Self::reduce(self.offset - 1, self.level)
    }

    /// Closest grid point above, `x + 2^-level`; `None` encodes +infinity.
    pub fn right_neighbor(&self) -> Option<DyadicIndex1D> {
        Self::reduce(self.offset + 1, self.level)
    }

    fn reduce(mut offset: u64, mut level: u32) -> Option<DyadicIndex1D> {
        if offset == 0 || offset == 1u64 << level {
            return None;
        }
        while offset % 2 == 0 {
            offset /= 2;
            level -= 1;
        }
        Some(DyadicIndex1D { level, offset })
    }

    /// The unique level-`level` label whose open support contains `x`, if
    /// any. Points of lower levels (where `x * 2^level` is an even integer)
    /// and points outside `(0,1)` have no active label.
    pub fn containing(level: u32, x: f64) -> Option<DyadicIndex1D> {
        let t = x * 2f64.powi(level as i32);
        if !(t > 0.0 && t < 2f64.powi(level as i32)) {
            return None;
        }
        let floor = t.floor();
        let i0 = floor as u64;
        if i0 % 2 == 1 {
            Some(DyadicIndex1D { level, offset: i0 })
        } else if t > floor {
            Some(DyadicIndex1D {
                level,
                offset: i0 + 1,
            })
        } else {
            // x is itself a grid point of a strictly lower level
            None
        }
    }
}

/// Multi-dimensional dyadic label: one `DyadicIndex1D` per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    axes: Vec<DyadicIndex1D>,
}

impl MultiIndex {
    pub fn new(axes: Vec<DyadicIndex1D>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Structural("multi-index needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[DyadicIndex1D] {
        &self.axes
    }

    pub fn levels(&self) -> Vec<u32> {
        self.axes.iter().map(|a| a.level).collect()
    }

    pub fn offsets(&self) -> Vec<u64> {
        self.axes.iter().map(|a| a.offset).collect()
    }

    /// Level sum `|l|`, the shell the point belongs to.
    pub fn shell(&self) -> u32 {
        self.axes.iter().map(|a| a.level).sum()
    }

    pub fn point(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.value()).collect()
    }

    pub(crate) fn packed_key(&self) -> Vec<u64> {
        self.axes.iter().map(DyadicIndex1D::packed).collect()
    }
}

impl DyadicIndex1D {
    // level <= 52 and offset < 2^52, so one u64 holds both
    pub(crate) fn packed(&self) -> u64 {
        ((self.level as u64) << 56) | self.offset
    }
}

/// The odd offsets `{1, 3, ..., 2^l - 1}` introduced at level `l`.
pub fn odd_indices(l: u32) -> Result<Vec<u64>> {
    if l == 0 {
        return Err(Error::Structural(
            "odd offsets are undefined at level 0 (the level-0 increment set is empty)".into(),
        ));
    }
    Ok((1..(1u64 << l)).step_by(2).collect())
}

/// The sorted dyadic set of level `l`: concatenation of the incremental
/// sets of levels `1..=l`, each listed in ascending coordinate order.
/// Length is `2^l - 1`.
pub fn sorted_dyadic_1d(l: u32) -> Result<Vec<DyadicIndex1D>> {
    if l == 0 {
        return Err(Error::Structural("dyadic set level must be >= 1".into()));
    }
    let mut out = Vec::with_capacity((1usize << l) - 1);
    for level in 1..=l {
        for offset in odd_indices(level)? {
            out.push(DyadicIndex1D { level, offset });
        }
    }
    Ok(out)
}

/// Cartesian product of per-dimension sorted dyadic sets. Dimension 1 is
/// the most significant factor and the last dimension varies fastest,
/// matching the Kronecker-product convention used by the factorization.
#[derive(Debug, Clone)]
pub struct FullGridDesign {
    levels: Vec<u32>,
    labels: Vec<MultiIndex>,
}

impl FullGridDesign {
    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn labels(&self) -> &[MultiIndex] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.labels.iter().map(|l| l.point()).collect()
    }
}

pub fn full_grid(levels: &[u32]) -> Result<FullGridDesign> {
    if levels.is_empty() {
        return Err(Error::Structural("full grid needs at least one level".into()));
    }
    let per_dim: Vec<Vec<DyadicIndex1D>> = levels
        .iter()
        .map(|&l| sorted_dyadic_1d(l))
        .collect::<Result<_>>()?;
    let radices: Vec<usize> = per_dim.iter().map(Vec::len).collect();
    let size = radices.iter().product();
    let mut labels = Vec::with_capacity(size);
    let mut idx = vec![0usize; levels.len()];
    loop {
        labels.push(MultiIndex {
            axes: idx.iter().zip(&per_dim).map(|(&i, v)| v[i]).collect(),
        });
        if !advance_mixed_radix(&mut idx, &radices) {
            return Ok(FullGridDesign {
                levels: levels.to_vec(),
                labels,
            });
        }
    }
}

/// Advances a mixed-radix counter with the last digit fastest; returns
/// false once the counter wraps around.
fn advance_mixed_radix(idx: &mut [usize], radices: &[usize]) -> bool {
    for dim in (0..idx.len()).rev() {
        idx[dim] += 1;
        if idx[dim] < radices[dim] {
            return true;
        }
        idx[dim] = 0;
    }
    false
}

/// Hyperbolic-cross sparse grid with the ordering the sparse factorization
/// requires: shells in increasing level-sum order, blocks inside a shell in
/// ascending colexicographic order of their level vectors, offsets inside a
/// block in the full-grid Kronecker order.
///
/// Colexicographic block order (rather than lexicographic) is what the
/// reference numerics of the hierarchical expansion follow; see the golden
/// tests in `chol` and `features`.
#[derive(Debug, Clone)]
pub struct SparseGridDesign {
    dim: usize,
    level: u32,
    labels: Vec<MultiIndex>,
    position: HashMap<Vec<u64>, usize>,
}

impl SparseGridDesign {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[MultiIndex] {
        &self.labels
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.labels.iter().map(|l| l.point()).collect()
    }

    /// Ordinal of a label in this design.
    pub fn position_of(&self, label: &MultiIndex) -> Option<usize> {
        self.position.get(label.packed_key().as_slice()).copied()
    }

    pub(crate) fn position_of_key(&self, key: &[u64]) -> Option<usize> {
        self.position.get(key).copied()
    }
}

/// Number of points of the level-`l`, dimension-`d` sparse grid:
/// `sum_{e=0}^{l-1} 2^e * C(e+d-1, d-1)`.
pub fn sparse_grid_size(l: u32, d: usize) -> usize {
    (0..l)
        .map(|e| (1usize << e) * binomial(e as usize + d - 1, d - 1))
        .sum()
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// All level vectors with entries >= 1 and `|l| = shell`, in ascending
/// colexicographic order (compare the reversed vectors lexicographically).
/// Shells below `d` admit no such vector and yield nothing.
pub(crate) fn shell_blocks(shell: u32, d: usize) -> Vec<Vec<u32>> {
    let mut blocks = Vec::new();
    if (shell as usize) < d {
        return blocks;
    }
    let mut current = vec![1u32; d];
    compose_rev(shell, d, &mut current, &mut blocks);
    blocks
}

// Enumerates compositions by choosing the LAST coordinate in the outermost
// recursion, producing colexicographic order directly.
fn compose_rev(remaining: u32, dims_left: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if dims_left == 1 {
        current[0] = remaining;
        out.push(current.clone());
        return;
    }
    if remaining < dims_left as u32 {
        return;
    }
    for v in 1..=(remaining + 1 - dims_left as u32) {
        current[dims_left - 1] = v;
        compose_rev(remaining - v, dims_left - 1, current, out);
    }
}

/// Blocks of the combination technique for a level-`l`, dimension-`d`
/// sparse grid: every level vector with `l <= |l'| <= l+d-1`, paired with
/// its signed binomial weight `(-1)^(l+d-1-|l'|) * C(d-1, l+d-1-|l'|)`.
/// Iteration order (shells ascending, colex inside a shell) is fixed so
/// floating accumulation is reproducible.
pub(crate) fn combination_blocks(l: u32, d: usize) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    for shell in l..l + d as u32 {
        let excess = (l + d as u32 - 1 - shell) as usize;
        let weight = if excess % 2 == 0 { 1.0 } else { -1.0 } * binomial(d - 1, excess) as f64;
        for block in shell_blocks(shell, d) {
            out.push((block, weight));
        }
    }
    out
}

pub fn sparse_grid(l: u32, d: usize) -> Result<SparseGridDesign> {
    if l == 0 || d == 0 {
        return Err(Error::Structural("sparse grid needs l >= 1 and d >= 1".into()));
    }
    let mut labels = Vec::with_capacity(sparse_grid_size(l, d));
    for shell in d as u32..l + d as u32 {
        for block in shell_blocks(shell, d) {
            // incremental block: offsets odd at exactly these levels,
            // dimension 1 most significant
            let radices: Vec<usize> = block.iter().map(|&lv| 1usize << (lv - 1)).collect();
            let mut counter = vec![0usize; d];
            loop {
                labels.push(MultiIndex {
                    axes: counter
                        .iter()
                        .zip(&block)
                        .map(|(&c, &lv)| DyadicIndex1D {
                            level: lv,
                            offset: 2 * c as u64 + 1,
                        })
                        .collect(),
                });
                if !advance_mixed_radix(&mut counter, &radices) {
                    break;
                }
            }
        }
    }
    let position: HashMap<Vec<u64>, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, lab)| (lab.packed_key(), i))
        .collect();
    debug_assert_eq!(position.len(), labels.len());
    Ok(SparseGridDesign {
        dim: d,
        level: l,
        labels,
        position,
    })
}

/// Maps each full-grid ordinal to the sparse-grid ordinal of the identical
/// point, matched by dyadic label.
pub fn fg_to_sg_positions(fg: &FullGridDesign, sg: &SparseGridDesign) -> Result<Vec<usize>> {
    fg.labels
        .iter()
        .map(|lab| {
            sg.position_of(lab).ok_or_else(|| {
                Error::Structural(format!(
                    "full-grid point with levels {:?} offsets {:?} is absent from the sparse grid",
                    lab.levels(),
                    lab.offsets()
                ))
            })
        })
        .collect()
}
