//! Shared oracles for the integration suites. Everything here goes through
//! dense reference linear algebra, independent of the sparse code paths it
//! checks.
#![allow(dead_code)] // each test binary uses its own subset

use dtmgp::chol::SparseUpperTriangular;
use dtmgp::kernel::TensorMarkovKernel;

/// Dense kernel Gram matrix, row-major.
pub fn dense_gram(kernel: &TensorMarkovKernel, pts: &[Vec<f64>]) -> Vec<f64> {
    let m = pts.len();
    let mut k = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            k[i * m + j] = kernel.eval(&pts[i], &pts[j]).unwrap();
        }
    }
    k
}

/// `max |R^-T K R^-1 - I|` through one dense intermediate (`B = R^-T K`).
pub fn gram_identity_error(r: &SparseUpperTriangular, k: &[f64]) -> f64 {
    let m = r.order();
    assert_eq!(k.len(), m * m);
    let mut b = vec![0.0; m * m];
    for i in 0..m {
        let (rows, values) = r.col(i);
        let out = &mut b[i * m..(i + 1) * m];
        for (&row, &v) in rows.iter().zip(values) {
            let krow = &k[row * m..(row + 1) * m];
            for (o, &kv) in out.iter_mut().zip(krow) {
                *o += v * kv;
            }
        }
    }
    let mut err: f64 = 0.0;
    for i in 0..m {
        let brow = &b[i * m..(i + 1) * m];
        for j in 0..m {
            let (rows, values) = r.col(j);
            let mut g = 0.0;
            for (&row, &v) in rows.iter().zip(values) {
                g += brow[row] * v;
            }
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((g - target).abs());
        }
    }
    err
}

/// All `(d, l)` pairs whose sparse grid stays within `max_points`.
pub fn configs_within(max_points: usize, max_dim: usize) -> Vec<(usize, u32)> {
    let mut out = Vec::new();
    for d in 1..=max_dim {
        for l in 1.. {
            if dtmgp::grid::sparse_grid_size(l, d) > max_points {
                break;
            }
            out.push((d, l));
        }
    }
    out
}
