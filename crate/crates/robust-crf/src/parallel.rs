//! Thread-parallel evaluation of the smoothing tree.
//!
//! The `L` branches of every tree node run as rayon tasks. Branch seeds come
//! from the tree path, and results are combined in branch order, so the
//! output is bit-identical to [`SmoothingPlan::smooth`] for any pool size.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use robust_crf_core::crf::SmoothingPlan;
use robust_crf_core::gcn::{Classifier, PredictionMatrix};
use robust_crf_core::{Graph, Result};

pub fn smooth_parallel<C: Classifier + Sync + ?Sized>(
    plan: &SmoothingPlan,
    model: &C,
    graph: &Graph,
) -> Result<PredictionMatrix> {
    smooth_at(plan, model, graph, plan.config().num_iterations, plan.root_seed())
}

fn smooth_at<C: Classifier + Sync + ?Sized>(
    plan: &SmoothingPlan,
    model: &C,
    graph: &Graph,
    depth: usize,
    node_seed: u64,
) -> Result<PredictionMatrix> {
    if depth == 0 {
        return model.predict(graph);
    }
    let branches: Vec<(f64, PredictionMatrix)> = (0..plan.config().num_samples)
        .into_par_iter()
        .map(|i| {
            let sample = plan.neighbor(graph, node_seed, i)?;
            let weight = plan.weight(graph, &sample)?;
            let pred = smooth_at(plan, model, &sample.graph, depth - 1, SmoothingPlan::child_seed(node_seed, i))?;
            Ok((weight, pred))
        })
        .collect::<Result<_>>()?;
    let base = model.predict(graph)?;
    let (weights, preds): (Vec<f64>, Vec<PredictionMatrix>) = branches.into_iter().unzip();
    plan.combine(&base, &weights, &preds)
}

/// Wraps a classifier and counts its invocations.
pub struct CountingClassifier<'a, C: ?Sized> {
    inner: &'a C,
    calls: AtomicU64,
}

impl<'a, C: Classifier + ?Sized> CountingClassifier<'a, C> {
    pub fn new(inner: &'a C) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<C: Classifier + ?Sized> Classifier for CountingClassifier<'_, C> {
    fn predict(&self, graph: &Graph) -> Result<PredictionMatrix> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(graph)
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("thread pool").install(f),
        None => f(),
    }
}
