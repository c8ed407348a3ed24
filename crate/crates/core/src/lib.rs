//! Discriminant dynamic mode decomposition.
//!
//! Fits per-episode DMD eigenvalue sets to a labeled collection of
//! multivariate time-series. The objective trades the variable-projection
//! reconstruction error against a kernel Fisher discriminant criterion
//! evaluated with the projection kernel between dynamic-mode subspaces.
//!
//! Module map:
//!
//! - [`numerics`]: complex SVD, pseudoinverse, range bases, Vandermonde matrices
//! - [`dmd`]: episodes, exact DMD, variable projection and its loss/gradient
//! - [`kernel`]: dynamic-mode subspaces, the projection kernel and its gradient
//! - [`kfd`]: class-indexed Gram matrices, Q1/Q2 and their gradients
//! - [`optim`]: the full objective, its gradient and the L-BFGS driver
//! - [`synth`], [`eval`], [`io`]: synthetic data, evaluation helpers, persistence

pub mod dataset;
pub mod dmd;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod kfd;
pub mod numerics;
pub mod optim;
pub mod par;
pub mod synth;

pub use dataset::Dataset;
pub use dmd::{DmdFit, Episode, ThetaSet};
pub use error::{Error, Result};
pub use kernel::DmsBasis;
pub use kfd::{ClassGram, ClassIndex};
pub use numerics::{CMat, C64};
pub use optim::{FitConfig, FitResult};
