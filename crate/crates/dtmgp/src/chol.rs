//! Sparse inverse Cholesky factors `R^-1` of kernel Gram matrices on dyadic
//! sets, full grids, and sparse grids.
//!
//! The one-dimensional factor is assembled column by column from local
//! three-point systems: the coefficients annihilate the kernel at both
//! neighbors and normalize the variance to one, which makes the resulting
//! features compactly supported and orthonormal. Full-grid factors are
//! Kronecker products of one-dimensional factors; sparse-grid factors
//! accumulate signed binomially-weighted full-grid factors scattered into
//! sparse-grid positions. Everything stays within a constant factor of the
//! grid size, both in entries and in work.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::{combination_blocks, sorted_dyadic_1d, sparse_grid, SparseGridDesign};
use crate::kernel::{MarkovKernel1D, TensorMarkovKernel};

/// Compressed sparse column storage of an upper-triangular matrix with
/// positive diagonal. Row and column ordinals address grid points in the
/// design order the matrix was built for.
#[derive(Debug, Clone)]
pub struct SparseUpperTriangular {
    order: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<f64>,
}

impl SparseUpperTriangular {
    fn from_columns(order: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(order + 1);
        let mut rows = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for (col, mut entries) in columns.into_iter().enumerate() {
            entries.sort_by_key(|&(r, _)| r);
            let mut has_diag = false;
            for (row, value) in entries {
                if row > col {
                    return Err(Error::Numerical(format!(
                        "entry ({row}, {col}) below the diagonal in a factor expected upper-triangular"
                    )));
                }
                if row == col {
                    has_diag = true;
                    if !(value > 0.0) {
                        return Err(Error::Numerical(format!(
                            "non-positive diagonal {value:e} at column {col}"
                        )));
                    }
                }
                rows.push(row);
                values.push(value);
            }
            if !has_diag {
                return Err(Error::Numerical(format!("missing diagonal at column {col}")));
            }
            col_ptr.push(rows.len());
        }
        Ok(Self {
            order,
            col_ptr,
            rows,
            values,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row ordinals and values of column `j`, rows ascending.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let span = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.rows[span.clone()], &self.values[span])
    }

    pub fn diag(&self, j: usize) -> f64 {
        let (rows, values) = self.col(j);
        values[rows.binary_search(&j).expect("diagonal present")]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (rows, values) = self.col(j);
        match rows.binary_search(&i) {
            Ok(k) => values[k],
            Err(_) => 0.0,
        }
    }

    /// `R^-T g`: entry `i` is the column-`i` pattern dotted with `g`.
    pub fn transpose_apply(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.order);
        (0..self.order)
            .map(|j| {
                let (rows, values) = self.col(j);
                rows.iter().zip(values).map(|(&r, &v)| v * g[r]).sum()
            })
            .collect()
    }

    /// `R^-1 v` by column-wise scatter.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.order);
        let mut out = vec![0.0; self.order];
        for j in 0..self.order {
            let (rows, values) = self.col(j);
            for (&r, &val) in rows.iter().zip(values) {
                out[r] += val * v[j];
            }
        }
        out
    }

    /// Dense row-major copy, intended for small orders in tests and output.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.order]; self.order];
        for j in 0..self.order {
            let (rows, values) = self.col(j);
            for (&r, &v) in rows.iter().zip(values) {
                dense[r][j] = v;
            }
        }
        dense
    }
}

/// Solution of the local three-point system for one grid point: the
/// coefficients of `k(., x_left)`, `k(., x_center)`, `k(., x_right)` that
/// annihilate the kernel at both neighbors and have unit variance.
/// Coefficients attached to infinite neighbors are absent.
#[derive(Debug, Clone)]
pub struct LocalCoefficients {
    pub x_left: Option<f64>,
    pub x_center: f64,
    pub x_right: Option<f64>,
    pub c_left: Option<f64>,
    pub c_center: f64,
    pub c_right: Option<f64>,
}

/// Solves the local system in closed form. The two annihilation equations
/// reduce, through the `p`/`q` factorization, to a 2x2 linear system for
/// the neighbor coefficients relative to the center; the unit-variance
/// equation then fixes the scale, with the center coefficient taken
/// positive.
pub fn local_coefficients(
    kernel: &MarkovKernel1D,
    x_left: Option<f64>,
    x_center: f64,
    x_right: Option<f64>,
) -> Result<LocalCoefficients> {
    if let Some(xl) = x_left {
        if xl >= x_center {
            return Err(Error::Structural(format!(
                "neighbors out of order: left {xl} >= center {x_center}"
            )));
        }
    }
    if let Some(xr) = x_right {
        if xr <= x_center {
            return Err(Error::Structural(format!(
                "neighbors out of order: right {xr} <= center {x_center}"
            )));
        }
    }
    // express c_left and c_right as multiples of the center coefficient
    let (a_left, a_right) = match (x_left, x_right) {
        (None, None) => (None, None),
        (None, Some(xr)) => {
            let pr = kernel.p(xr);
            if pr == 0.0 {
                return Err(Error::Numerical(format!(
                    "p vanished at right neighbor {xr}"
                )));
            }
            (None, Some(-kernel.p(x_center) / pr))
        }
        (Some(xl), None) => {
            let ql = kernel.q(xl);
            if ql == 0.0 {
                return Err(Error::Numerical(format!("q vanished at left neighbor {xl}")));
            }
            (Some(-kernel.q(x_center) / ql), None)
        }
        (Some(xl), Some(xr)) => {
            let (pl, ql) = (kernel.p(xl), kernel.q(xl));
            let (pc, qc) = (kernel.p(x_center), kernel.q(x_center));
            let (pr, qr) = (kernel.p(xr), kernel.q(xr));
            let det = ql * pr - pl * qr;
            if det == 0.0 || !det.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular local system at ({xl}, {x_center}, {xr})"
                )));
            }
            (
                Some(-(qc * pr - qr * pc) / det),
                Some(-(ql * pc - pl * qc) / det),
            )
        }
    };
    // unit-variance normalization over the finite nodes
    let mut nodes = vec![(x_center, 1.0f64)];
    if let (Some(xl), Some(al)) = (x_left, a_left) {
        nodes.push((xl, al));
    }
    if let (Some(xr), Some(ar)) = (x_right, a_right) {
        nodes.push((xr, ar));
    }
    let mut variance = 0.0;
    for &(xi, ci) in &nodes {
        for &(xj, cj) in &nodes {
            variance += ci * cj * kernel.eval(xi, xj);
        }
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Numerical(format!(
            "non-positive local variance {variance:e} at ({x_left:?}, {x_center}, {x_right:?})"
        )));
    }
    let scale = variance.sqrt().recip();
    Ok(LocalCoefficients {
        x_left,
        x_center,
        x_right,
        c_left: a_left.map(|a| a * scale),
        c_center: scale,
        c_right: a_right.map(|a| a * scale),
    })
}

/// All local coefficient solutions for the sorted dyadic set of level `l`,
/// indexed by sorted position. Shared by the factorization and the sparse
/// feature evaluation.
pub(crate) fn dyadic_coefficients(
    kernel: &MarkovKernel1D,
    l: u32,
) -> Result<Vec<LocalCoefficients>> {
    sorted_dyadic_1d(l)?
        .into_iter()
        .map(|label| {
            let left = label.left_neighbor().map(|n| n.value());
            let right = label.right_neighbor().map(|n| n.value());
            local_coefficients(kernel, left, label.value(), right)
        })
        .collect()
}

/// `R^-1` over the sorted dyadic set of level `l`. Each column carries at
/// most three entries: the diagonal plus the finite neighbors, which sit at
/// strictly lower levels and therefore strictly earlier positions.
pub fn inverse_cholesky_1d(kernel: &MarkovKernel1D, l: u32) -> Result<SparseUpperTriangular> {
    let labels = sorted_dyadic_1d(l)?;
    let coeffs = dyadic_coefficients(kernel, l)?;
    let order = labels.len();
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::with_capacity(order);
    for (label, lc) in labels.iter().zip(&coeffs) {
        let mut col = Vec::with_capacity(3);
        col.push((label.sorted_position(), lc.c_center));
        if let (Some(n), Some(c)) = (label.left_neighbor(), lc.c_left) {
            col.push((n.sorted_position(), c));
        }
        if let (Some(n), Some(c)) = (label.right_neighbor(), lc.c_right) {
            col.push((n.sorted_position(), c));
        }
        columns.push(col);
    }
    SparseUpperTriangular::from_columns(order, columns)
}

/// Kronecker product of per-dimension one-dimensional factors over the
/// sorted full grid, dimension 1 most significant.
pub fn inverse_cholesky_fg(
    kernel: &TensorMarkovKernel,
    levels: &[u32],
) -> Result<SparseUpperTriangular> {
    if levels.len() != kernel.dim() {
        return Err(Error::Structural(format!(
            "level vector of length {} for a kernel of dimension {}",
            levels.len(),
            kernel.dim()
        )));
    }
    let factors: Vec<SparseUpperTriangular> = levels
        .iter()
        .enumerate()
        .map(|(j, &lj)| inverse_cholesky_1d(kernel.factor(j), lj))
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = factors.iter().map(|f| f.order()).collect();
    let order: usize = sizes.iter().product();
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::with_capacity(order);
    let mut col_idx = vec![0usize; levels.len()];
    loop {
        let mut entries = vec![(0usize, 1.0f64)];
        for (j, factor) in factors.iter().enumerate() {
            let (rows, values) = factor.col(col_idx[j]);
            let mut next = Vec::with_capacity(entries.len() * rows.len());
            for &(r_acc, v_acc) in &entries {
                for (&r, &v) in rows.iter().zip(values) {
                    next.push((r_acc * sizes[j] + r, v_acc * v));
                }
            }
            entries = next;
        }
        columns.push(entries);
        if !advance(&mut col_idx, &sizes) {
            break;
        }
    }
    SparseUpperTriangular::from_columns(order, columns)
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

/// `R^-1` over the level-`l` sparse grid of the kernel's dimension,
/// accumulated block by block in a fixed order (shells ascending, colex
/// inside a shell) so the floating-point sums are reproducible.
pub fn inverse_cholesky_sg(kernel: &TensorMarkovKernel, l: u32) -> Result<SparseUpperTriangular> {
    let d = kernel.dim();
    let sg = sparse_grid(l, d)?;
    inverse_cholesky_on(kernel, l, &sg)
}

/// As [`inverse_cholesky_sg`] but reusing an already built design.
pub fn inverse_cholesky_on(
    kernel: &TensorMarkovKernel,
    l: u32,
    sg: &SparseGridDesign,
) -> Result<SparseUpperTriangular> {
    let d = kernel.dim();
    if sg.dim() != d || sg.level() != l {
        return Err(Error::Structural(
            "sparse grid design does not match the requested kernel and level".into(),
        ));
    }
    if d == 1 {
        return inverse_cholesky_1d(kernel.factor(0), l);
    }
    // packed dyadic labels per level, shared across dimensions
    let packed: Vec<Vec<u64>> = (1..=l)
        .map(|lv| {
            Ok(sorted_dyadic_1d(lv)?
                .iter()
                .map(|label| label.packed())
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut factor_cache: HashMap<(usize, u32), SparseUpperTriangular> = HashMap::new();
    // duplicates are pushed in block order and merged afterwards by a
    // stable sort, so every entry sums its contributions in the same
    // fixed order and the result is reproducible bit for bit
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); sg.len()];
    let mut positions: Vec<usize> = Vec::new();
    let mut key = vec![0u64; d];
    let mut idx = vec![0usize; d];
    let mut entry_idx = vec![0usize; d];
    let mut counts = vec![0usize; d];
    for (block, weight) in combination_blocks(l, d) {
        for (j, &lj) in block.iter().enumerate() {
            if let std::collections::hash_map::Entry::Vacant(slot) = factor_cache.entry((j, lj)) {
                slot.insert(inverse_cholesky_1d(kernel.factor(j), lj)?);
            }
        }
        let factors: Vec<&SparseUpperTriangular> = block
            .iter()
            .enumerate()
            .map(|(j, &lj)| &factor_cache[&(j, lj)])
            .collect();
        let sizes: Vec<usize> = factors.iter().map(|f| f.order()).collect();
        // full-grid ordinal -> sparse-grid ordinal, by packed label
        positions.clear();
        idx.iter_mut().for_each(|v| *v = 0);
        loop {
            for j in 0..d {
                key[j] = packed[block[j] as usize - 1][idx[j]];
            }
            let pos = sg.position_of_key(&key).ok_or_else(|| {
                Error::Structural(
                    "full-grid point absent from the sparse grid (grid mismatch)".into(),
                )
            })?;
            positions.push(pos);
            if !advance(&mut idx, &sizes) {
                break;
            }
        }
        // scatter the Kronecker product column by column
        idx.iter_mut().for_each(|v| *v = 0);
        let mut fg_col = 0usize;
        loop {
            let sg_col = positions[fg_col];
            for j in 0..d {
                counts[j] = factors[j].col(idx[j]).0.len();
            }
            entry_idx.iter_mut().for_each(|v| *v = 0);
            loop {
                let mut fg_row = 0usize;
                let mut value = weight;
                for j in 0..d {
                    let (rows, values) = factors[j].col(idx[j]);
                    fg_row = fg_row * sizes[j] + rows[entry_idx[j]];
                    value *= values[entry_idx[j]];
                }
                let sg_row = positions[fg_row];
                debug_assert!(sg_row <= sg_col);
                columns[sg_col].push((sg_row, value));
                if !advance(&mut entry_idx, &counts) {
                    break;
                }
            }
            if !advance(&mut idx, &sizes) {
                break;
            }
            fg_col += 1;
        }
    }
    for col in &mut columns {
        // stable by row, so contributions to one entry stay in block order
        col.sort_by_key(|&(row, _)| row);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
        for &(row, value) in col.iter() {
            match merged.last_mut() {
                Some((last_row, last_value)) if *last_row == row => *last_value += value,
                _ => merged.push((row, value)),
            }
        }
        *col = merged;
    }
    SparseUpperTriangular::from_columns(sg.len(), columns)
}
