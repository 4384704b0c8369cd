//! Allocation-only core of the robust-crf toolkit.
//!
//! Everything here is a pure function of its inputs and an explicit seed:
//! the graph model, a two-layer GCN with hand-written gradients, the
//! perturbation-ball samplers, the mean-field CRF smoother and the attacks
//! used to evaluate it. File formats, timing and threading live in the
//! `robust-crf` companion crate.
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod attack;
pub mod crf;
mod error;
pub mod gcn;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use graph::{DatasetSplits, Graph};
pub use matrix::Matrix;
