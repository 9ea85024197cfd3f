//! Robust shrinkage estimation of covariance and scatter matrices.
//!
//! The estimators in this crate fit an M-estimator of scatter (Gaussian,
//! Huber, Tyler or multivariate-t weights) and shrink its eigenvalues toward
//! their grand mean,
//!
//! ```text
//! S_beta = beta * S + (1 - beta) * (tr(S)/p) * I,
//! ```
//!
//! with the shrinkage coefficient `beta` chosen fully automatically to
//! approximate the minimum-MSE oracle under elliptical sampling. Real and
//! complex data are supported throughout.
//!
//! Module map:
//! - [`numerics`]: chi-square cdf/quantile and (elliptical) kurtosis;
//! - [`elliptical`]: synthetic elliptical samples, AR(1) scatter structures
//!   and radial-law moments;
//! - [`mest`]: weight functions, the fixed-point solver, winsorization and
//!   consistency factors;
//! - [`shrinkage`]: sphericity estimation, oracle shrinkage coefficients and
//!   the end-to-end estimator pipelines;
//! - [`harness`]: Monte Carlo experiments, validation suites and file I/O.

pub mod elliptical;
mod error;
mod field;
pub mod harness;
pub mod linalg;
pub mod mest;
pub mod numerics;
pub mod shrinkage;

pub use error::{Error, Result};
pub use field::{Field, Scalar};
pub use num_complex::Complex64;
