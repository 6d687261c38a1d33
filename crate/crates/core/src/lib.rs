//! Adaptive linear regression and joint impute-then-regress for prediction
//! with missing data.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and explicit seeds; file formats, the benchmark
//! runner and the command line live in the `missfit` crate.
//!
//! Layout:
//!
//! - [`data`]: masked datasets `(X, M, y)` and the masked inner product.
//! - [`elasticnet`]: cyclic coordinate descent with per-feature penalties.
//! - [`adaptive`]: feature expansions for the adaptive model hierarchy,
//!   the finitely adaptive partition tree and imputation extraction.
//! - [`joint`]: joint optimisation of an imputation vector and a
//!   downstream regressor.
//! - [`learners`]: CART and random forests with MIA splits, mean imputation.
//! - [`datagen`]: synthetic and semi-synthetic instance generation.
//! - [`metrics`], [`cv`], [`methods`]: evaluation pieces shared by the
//!   benchmark runner.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adaptive;
pub mod assignment;
pub mod cv;
pub mod data;
pub mod datagen;
pub mod elasticnet;
pub mod error;
pub(crate) mod float;
pub mod joint;
pub mod learners;
pub mod matrix;
pub mod methods;
pub mod metrics;
pub mod seed;

pub use data::{masked_dot, MaskedDataset, PatternKey};
pub use error::{Error, Result};
pub use matrix::Matrix;
