//! File formats, the benchmark runner and the `missfit` command line on top
//! of `missfit-core`.

pub mod bench;
pub mod config;
pub mod error;
pub mod fmt;
pub mod io;

pub use error::{Error, Result};
