//! Independent dense oracles for the sparse factorization: entrywise
//! agreement with the inverse of the dense Cholesky factor, and the
//! linear-cost growth of the construction.

mod common;

use std::time::Instant;

use dtmgp::chol::inverse_cholesky_sg;
use dtmgp::features::FeatureBasis;
use dtmgp::kernel::{MarkovKernel1D, TensorMarkovKernel};

fn kernels(d: usize) -> Vec<TensorMarkovKernel> {
    vec![
        TensorMarkovKernel::isotropic(MarkovKernel1D::laplace(1.0), d).unwrap(),
        TensorMarkovKernel::isotropic(MarkovKernel1D::brownian_sheet(1.0), d).unwrap(),
    ]
}

/// Inverse of the upper-triangular factor `R` (`K = R^T R`) by back
/// substitution on columns of the identity.
fn dense_inverse_upper(r: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let n = r.nrows();
    let mut inv = nalgebra::DMatrix::zeros(n, n);
    for col in 0..n {
        for i in (0..=col).rev() {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..=col {
                sum -= r[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = sum / r[(i, i)];
        }
    }
    inv
}

#[test]
fn factor_matches_dense_cholesky_inverse() {
    for d in 1..=3usize {
        for l in 1..=5u32 {
            for kernel in kernels(d) {
                let basis = FeatureBasis::new(kernel.clone(), l).unwrap();
                let m = basis.len();
                let pts = basis.grid_points();
                let gram =
                    nalgebra::DMatrix::from_fn(m, m, |i, j| kernel.eval(&pts[i], &pts[j]).unwrap());
                let chol = gram.cholesky().expect("SPD Gram");
                let r_dense = chol.l().transpose();
                let r_inv_dense = dense_inverse_upper(&r_dense);
                let sparse = basis.inv_chol();
                let mut worst: f64 = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        worst = worst.max((sparse.entry(i, j) - r_inv_dense[(i, j)]).abs());
                    }
                }
                assert!(worst < 1e-8, "d={d} l={l} {kernel:?}: {worst:e}");
            }
        }
    }
}

#[test]
fn construction_cost_grows_linearly() {
    // time one level, repeating the build until the clock is trustworthy
    fn timed_build(kernel: &TensorMarkovKernel, l: u32) -> f64 {
        let mut reps = 0u32;
        let started = Instant::now();
        loop {
            let factor = inverse_cholesky_sg(kernel, l).unwrap();
            std::hint::black_box(factor.nnz());
            reps += 1;
            if started.elapsed().as_millis() >= 120 {
                break;
            }
        }
        started.elapsed().as_secs_f64() / reps as f64
    }
    let kernel = TensorMarkovKernel::isotropic(MarkovKernel1D::laplace(1.0), 2).unwrap();
    // warm up allocator and caches on the largest size first
    std::hint::black_box(inverse_cholesky_sg(&kernel, 9).unwrap().nnz());
    // best of several interleaved passes per level, which discards
    // scheduling noise from tests running on sibling cores
    let levels: Vec<u32> = (4..=9).collect();
    let mut best = vec![f64::INFINITY; levels.len()];
    for _ in 0..3 {
        for (slot, &l) in best.iter_mut().zip(&levels) {
            *slot = slot.min(timed_build(&kernel, l));
        }
    }
    let ratios: Vec<f64> = best.windows(2).map(|w| w[1] / w[0]).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    println!("construction time ratios per level for d=2: {ratios:?} (mean {mean:.2})");
    assert!(
        mean <= 2.8,
        "construction cost grew superlinearly: ratios {ratios:?}, mean {mean}"
    );
}
