//! Multi-level kriging: an orthonormal basis adapted to a binary
//! partition tree and a polynomial trend space turns ill-conditioned
//! covariance systems into well-conditioned sparse multi-level ones.
//! The crate covers the whole workbench: polynomial index sets, Matern
//! and Gaussian kernels, RP/kD trees, the basis transform, sparsified
//! covariance assembly, a sparse Cholesky / PCG solver stack,
//! maximum-likelihood estimation, kriging prediction, synthetic data
//! and closed-form a-posteriori error bounds.

pub mod basis;
pub mod bessel;
pub mod bounds;
pub mod cov;
pub mod error;
pub mod field;
pub mod index_set;
pub mod io;
pub mod kernel;
pub mod mle;
pub mod par;
pub mod points;
pub mod precond;
pub mod predict;
pub mod sparse;
pub mod tree;

pub use error::{Error, Result};

pub use nalgebra;
