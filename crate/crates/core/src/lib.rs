//! Mixtures of bilateral-projection two-dimensional probabilistic PCA.
//!
//! Each p×q sample `X` is modelled by one of `K` local components as
//! `X = L B Rᵀ + M + E` with a matrix-variate Gaussian core `B ~ N(0, I_r, I_c)`
//! and isotropic noise. Training uses a variational EM loop; GLRAM and a
//! vectorial mixture of PPCA are provided as baselines.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod matvar;
pub mod model;
pub mod persist;
pub mod rng;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{FitConfig, FitResult, MixtureParams};
