//! Fractional stochastic differential equations with Caputo dissipation and
//! fractional Brownian forcing.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::excessive_precision)]

pub mod error;
pub mod fbm;
pub mod frackernel;
pub mod grid;
pub mod harness;
pub mod linear_oracle;
pub mod markov_embedding;
pub mod mlf;
pub(crate) mod quad;
pub mod rng;
pub mod solver;
pub mod special;
pub mod stats;
pub mod stoch_integral;

pub use error::{FsdeError, Result};
pub use fbm::{FbmPath, HurstParam};
pub use grid::TimeGrid;
pub use mlf::{FracOrder, MlSettings};
pub use rng::RngSpec;
pub use solver::{ModelSpec, Potential, SolutionPath};
