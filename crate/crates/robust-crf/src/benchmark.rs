//! Wall time and model-call count of the smoother over an `(L, K)` grid.

use std::fmt::Write as _;
use std::time::Instant;

use robust_crf_core::crf::{model_call_count, CrfConfig, SmoothingPlan};
use robust_crf_core::gcn::Classifier;
use robust_crf_core::Graph;

use crate::parallel::{smooth_parallel, CountingClassifier};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub num_samples: usize,
    pub num_iterations: usize,
    pub model_calls: u64,
    /// Fastest of the measured repetitions, in milliseconds.
    pub wall_ms: Option<f64>,
}

/// Times one smoothing call per cell, keeping the fastest of `repeats` runs.
pub fn timing_benchmark<C: Classifier + Sync + ?Sized>(
    model: &C,
    graph: &Graph,
    base: &CrfConfig,
    sample_values: &[usize],
    iteration_values: &[usize],
    repeats: usize,
    timing: bool,
) -> anyhow::Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for &l in sample_values {
        for &k in iteration_values {
            let cfg = CrfConfig { num_samples: l, num_iterations: k, ..base.clone() };
            let plan = SmoothingPlan::new(&cfg, graph)?;
            let counted = CountingClassifier::new(model);
            let mut best = f64::INFINITY;
            for _ in 0..repeats.max(1) {
                counted.reset();
                let start = Instant::now();
                smooth_parallel(&plan, &counted, graph)?;
                best = best.min(start.elapsed().as_secs_f64() * 1e3);
            }
            let expected = model_call_count(l as u64, k as u32)?;
            anyhow::ensure!(counted.calls() == expected, "L={l} K={k}: {} calls, expected {expected}", counted.calls());
            rows.push(TimingRow {
                num_samples: l,
                num_iterations: k,
                model_calls: counted.calls(),
                wall_ms: timing.then_some(best),
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("num_samples,num_iterations,model_calls,wall_ms\n");
    for r in rows {
        let wall = r.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.num_samples, r.num_iterations, r.model_calls, wall).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use robust_crf_core::gcn::init_parameters;
    use robust_crf_core::graph::{generate_synthetic, SyntheticSpec};

    #[test]
    fn counts_match_recursion() {
        let (g, _) =
            generate_synthetic(&SyntheticSpec { num_nodes: 30, feature_dim: 4, ..SyntheticSpec::default() }).unwrap();
        let p = init_parameters(0, 4, 8, 2).unwrap();
        let rows = timing_benchmark(&p, &g, &CrfConfig::default(), &[1, 5, 10], &[0, 2], 1, false).unwrap();
        let calls: Vec<u64> = rows.iter().map(|r| r.model_calls).collect();
        assert_eq!(calls, vec![1, 3, 1, 31, 1, 111]);
        assert!(rows.iter().all(|r| r.wall_ms.is_none()));
    }
}
