//! File formats, experiment harness and parallel execution for
//! [`robust_crf_core`].

pub mod benchmark;
pub mod checkpoint;
pub mod dataset;
pub mod experiment;
pub mod parallel;
pub mod predictions;

pub use robust_crf_core as core;
