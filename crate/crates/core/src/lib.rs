//! Multivariate spatio-temporal dynamic models with compactly supported
//! basis functions on an icosahedral grid, fitted by Gibbs sampling.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod ingest;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod sparse;

pub use error::{Error, Result};
