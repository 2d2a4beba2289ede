//! Deep tensor-Markov Gaussian processes with sparse hierarchical expansions.
//!
//! The crate builds, layer by layer, the machinery for a sparse deep-GP
//! surrogate model:
//!
//! - [`grid`]: dyadic point sets, full grids, and hyperbolic-cross sparse
//!   grids with the exact ordering the factorization needs;
//! - [`kernel`]: one-dimensional Markov kernels (`p(min) q(max)`) and their
//!   tensor products;
//! - [`chol`]: the sparse inverse Cholesky factor `R^-1` of the kernel Gram
//!   matrix, built in time and space linear in the grid size;
//! - [`features`]: sparse evaluation of the hierarchical feature vector
//!   `phi(x) = R^-T k(X, x)`, with only polylogarithmically many nonzeros;
//! - [`expansion`]: the single-layer expansion `mu + phi(x)^T Z`, prior
//!   sampling, coefficient fitting, and variance-gap diagnostics;
//! - [`model`]: the multi-layer model with reparameterized forward sampling
//!   and exact reverse-mode gradients;
//! - [`train`]: variational training (Monte-Carlo energy, closed-form KL,
//!   adaptive-moment ascent on the evidence lower bound);
//! - [`eval`]: two-sample Kolmogorov-Smirnov evaluation, macro-replication,
//!   and a Brownian-sheet random-field simulator;
//! - [`config`]: run configuration, model serialization, and the data
//!   formats behind the command-line tool.

// `!(x > 0.0)` is the NaN-rejecting form of the positivity checks, and
// index loops mirror the row/column arithmetic of the matrix kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod chol;
pub mod config;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod features;
pub mod grid;
pub mod kernel;
mod linalg;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
