//! Adversarial perturbations used to evaluate the smoother.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::gcn::{loss_and_gradients_with, GcnParameters};
use crate::graph::{off_diagonal_positions, pair_from_index, Graph, NormalizedAdjacency};
use crate::{Error, Result};

/// Attack family and strength.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum AttackKind {
    /// `X̃ = X + ψ·Z`, `Z ~ N(0, I)`.
    GaussianNoise { psi: f64 },
    /// Sign-gradient ascent inside an L∞ ball of `rate · (max X − min X)`.
    PgdFeature {
        rate: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_pgd_steps"))]
        steps: usize,
    },
    /// Delete intra-class edges and insert inter-class edges, `⌊rate · m⌋` in total.
    DiceStructure { rate: f64 },
}

#[cfg(feature = "serde")]
fn default_pgd_steps() -> usize {
    DEFAULT_PGD_STEPS
}

pub const DEFAULT_PGD_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttackBudget {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: AttackKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

impl AttackBudget {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AttackKind::GaussianNoise { psi } if !(psi >= 0.0) || !psi.is_finite() => {
                Err(Error::InvalidArgument(format!("psi must be >= 0, got {psi}")))
            }
            AttackKind::PgdFeature { rate, .. } | AttackKind::DiceStructure { rate }
                if !(0.0..=1.0).contains(&rate) =>
            {
                Err(Error::InvalidArgument(format!("rate must be in [0, 1], got {rate}")))
            }
            _ => Ok(()),
        }
    }
}

/// What an attack changed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationSummary {
    pub edges_removed: usize,
    pub edges_added: usize,
    pub feature_linf: f64,
    pub feature_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub perturbed: Graph,
    pub summary: PerturbationSummary,
}

fn feature_summary(original: &Graph, perturbed: &Graph) -> PerturbationSummary {
    let (mut linf, mut sq) = (0.0f64, 0.0);
    for (a, b) in original.features().as_slice().iter().zip(perturbed.features().as_slice()) {
        let d = libm::fabs(b - a);
        linf = linf.max(d);
        sq += d * d;
    }
    PerturbationSummary { feature_linf: linf, feature_l2: libm::sqrt(sq), ..Default::default() }
}

pub fn gaussian_feature_attack<R: rand::Rng + ?Sized>(rng: &mut R, graph: &Graph, psi: f64) -> Result<AttackResult> {
    if !(psi >= 0.0) || !psi.is_finite() {
        return Err(Error::InvalidArgument(format!("psi must be >= 0, got {psi}")));
    }
    let mut x = graph.features().clone();
    for v in x.as_mut_slice() {
        let z: f64 = StandardNormal.sample(rng);
        *v += psi * z;
    }
    let perturbed = graph.with_features(x)?;
    let summary = feature_summary(graph, &perturbed);
    Ok(AttackResult { perturbed, summary })
}

/// L∞ radius used by [`pgd_feature_attack`] for a given rate.
pub fn pgd_epsilon(graph: &Graph, rate: f64) -> f64 {
    let x = graph.features().as_slice();
    if x.is_empty() {
        return 0.0;
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    rate * (max - min)
}

/// White-box sign-gradient ascent on the mean cross-entropy over
/// `target_idx`, step `2.5ε / steps`, projected onto `‖X̃ − X‖∞ ≤ ε` after
/// every step.
pub fn pgd_feature_attack(
    graph: &Graph,
    params: &GcnParameters,
    rate: f64,
    steps: usize,
    target_idx: &[usize],
) -> Result<AttackResult> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("rate must be in [0, 1], got {rate}")));
    }
    if graph.num_features() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} features, model expects {}",
            graph.num_features(),
            params.input_dim()
        )));
    }
    if target_idx.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if steps == 0 {
        return Ok(AttackResult { perturbed: graph.clone(), summary: PerturbationSummary::default() });
    }
    let eps = pgd_epsilon(graph, rate);
    let step = 2.5 * eps / steps as f64;
    let adj = NormalizedAdjacency::new(graph);
    let x0 = graph.features();
    let mut x = x0.clone();
    for _ in 0..steps {
        let grads = loss_and_gradients_with(params, &adj, &x, graph.labels(), target_idx)?;
        if !grads.x.is_finite() {
            return Err(Error::Diverged("non-finite feature gradient".into()));
        }
        let it = x.as_mut_slice().iter_mut().zip(x0.as_slice()).zip(grads.x.as_slice());
        for ((v, &orig), &g) in it {
            let dir = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            *v = (*v + step * dir).clamp(orig - eps, orig + eps);
        }
    }
    let perturbed = graph.with_features(x)?;
    let summary = feature_summary(graph, &perturbed);
    Ok(AttackResult { perturbed, summary })
}

/// DICE: `⌊rate · m⌋` modifications, `⌈b/2⌉` deletions of same-label edges
/// and `⌊b/2⌋` insertions of different-label non-edges, shifting to the other
/// type when one pool runs out.
pub fn dice_structural_attack<R: rand::Rng + ?Sized>(rng: &mut R, graph: &Graph, rate: f64) -> Result<AttackResult> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("rate must be in [0, 1], got {rate}")));
    }
    let budget = libm::floor(rate * graph.num_edges() as f64) as usize;
    let labels = graph.labels();
    let n = graph.num_nodes();

    let intra_edges: Vec<(usize, usize)> = graph.edges().filter(|&(a, b)| labels[a] == labels[b]).collect();
    let inter_edges = graph.num_edges() - intra_edges.len();
    let mut class_sizes = alloc::vec![0usize; graph.num_classes()];
    for &l in labels {
        class_sizes[l] += 1;
    }
    let intra_pairs: usize = class_sizes.iter().map(|&s| s * s.saturating_sub(1) / 2).sum();
    let inter_pairs = off_diagonal_positions(n) - intra_pairs;
    let insert_pool = inter_pairs - inter_edges;
    let delete_pool = intra_edges.len();

    if budget > insert_pool + delete_pool {
        return Err(Error::BudgetTooLarge { budget, available: insert_pool + delete_pool });
    }
    let mut deletions = budget.div_ceil(2).min(delete_pool);
    let mut insertions = budget - deletions;
    if insertions > insert_pool {
        insertions = insert_pool;
        deletions = budget - insertions;
    }

    let mut perturbed = graph.clone();
    for k in rand::seq::index::sample(rng, delete_pool, deletions).into_iter() {
        let (a, b) = intra_edges[k];
        perturbed.toggle_edge(a, b);
    }

    let is_candidate = |a: usize, b: usize| labels[a] != labels[b] && !graph.has_edge(a, b);
    if insertions > 0 {
        if insertions * 2 >= insert_pool {
            let pool: Vec<(usize, usize)> =
                (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|&(a, b)| is_candidate(a, b)).collect();
            for k in rand::seq::index::sample(rng, pool.len(), insertions).into_iter() {
                let (a, b) = pool[k];
                perturbed.toggle_edge(a, b);
            }
        } else {
            let positions = off_diagonal_positions(n);
            let mut chosen = BTreeSet::new();
            while chosen.len() < insertions {
                let (a, b) = pair_from_index(n, rng.random_range(0..positions));
                if is_candidate(a, b) && chosen.insert((a, b)) {
                    perturbed.toggle_edge(a, b);
                }
            }
        }
    }

    Ok(AttackResult {
        perturbed,
        summary: PerturbationSummary { edges_removed: deletions, edges_added: insertions, ..Default::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, hamming_distance, SyntheticSpec};
    use crate::rng::rng_from_seed;

    fn sbm() -> Graph {
        generate_synthetic(&SyntheticSpec { num_nodes: 60, feature_dim: 4, ..SyntheticSpec::default() }).unwrap().0
    }

    #[test]
    fn gaussian_zero_psi_is_identity() {
        let g = sbm();
        let out = gaussian_feature_attack(&mut rng_from_seed(1), &g, 0.0).unwrap();
        assert_eq!(out.perturbed, g);
        assert!(gaussian_feature_attack(&mut rng_from_seed(1), &g, -1.0).is_err());
    }

    #[test]
    fn dice_budget_and_types() {
        let g = sbm();
        for rate in [0.0, 0.1, 0.5] {
            let out = dice_structural_attack(&mut rng_from_seed(5), &g, rate).unwrap();
            let b = libm::floor(rate * g.num_edges() as f64) as usize;
            assert_eq!(hamming_distance(&g, &out.perturbed).unwrap(), b);
            assert_eq!(out.summary.edges_removed, b.div_ceil(2));
            assert_eq!(out.summary.edges_added, b / 2);
            for (a, c) in g.edges() {
                if !out.perturbed.has_edge(a, c) {
                    assert_eq!(g.labels()[a], g.labels()[c]);
                }
            }
            for (a, c) in out.perturbed.edges() {
                if !g.has_edge(a, c) {
                    assert_ne!(g.labels()[a], g.labels()[c]);
                }
            }
        }
    }

    #[test]
    fn dice_falls_back_when_intra_pool_is_empty() {
        // only inter-class edges: every modification must be an insertion
        let x = crate::Matrix::zeros(4, 1);
        let g = Graph::new([(0, 2), (1, 3)], x, alloc::vec![0, 0, 1, 1], 2).unwrap();
        let out = dice_structural_attack(&mut rng_from_seed(0), &g, 1.0).unwrap();
        assert_eq!(out.summary.edges_removed, 0);
        assert_eq!(out.summary.edges_added, 2);
        assert_eq!(out.perturbed.num_edges(), 4);
    }

    #[test]
    fn dice_rejects_impossible_budget() {
        // single-class complete graph on 3 nodes: 3 intra edges, no inter pairs
        let g = Graph::new([(0, 1), (0, 2), (1, 2)], crate::Matrix::zeros(3, 1), alloc::vec![0; 3], 1).unwrap();
        let out = dice_structural_attack(&mut rng_from_seed(0), &g, 1.0).unwrap();
        assert_eq!(out.perturbed.num_edges(), 0);
        assert!(dice_structural_attack(&mut rng_from_seed(0), &g, 1.5).is_err());
    }
}
