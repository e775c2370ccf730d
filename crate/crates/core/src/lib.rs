//! Non-intersecting theta-Bernoulli walk ensembles.
//!
//! Exact kernels and path weights, transfer-matrix and Monte Carlo samplers,
//! the Lobachevsky surface tension, a limit-shape solver, Jack/Macdonald
//! principal specializations and a loop-equation holomorphy check.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lattice;
pub mod loopcheck;
pub mod surface;
pub mod symfun;
pub mod variational;
pub mod verify;
pub mod sampler;
pub mod weights;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
