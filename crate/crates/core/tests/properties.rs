use proptest::prelude::*;

use robust_crf_core::crf::update_rule;
use robust_crf_core::gcn::{forward, init_parameters, PredictionMatrix};
use robust_crf_core::graph::{hamming_distance, normalize_adjacency, NormalizedAdjacency};
use robust_crf_core::rng::rng_from_seed;
use robust_crf_core::sampler::{ball_lower_bound, enumerate_hamming_ball, sample_structural_neighbor_with_radius};
use robust_crf_core::{Graph, Matrix};

fn graph_strategy(n: usize) -> impl Strategy<Value = Graph> {
    let pairs = n * (n - 1) / 2;
    (
        proptest::collection::vec(any::<bool>(), pairs),
        proptest::collection::vec(-2.0f64..2.0, n * 3),
        proptest::collection::vec(0usize..2, n),
    )
        .prop_map(move |(mask, x, labels)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if mask[k] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            Graph::new(edges, Matrix::from_vec(n, 3, x).unwrap(), labels, 2).unwrap()
        })
}

fn prediction_rows(c: usize, rows: usize) -> impl Strategy<Value = PredictionMatrix> {
    proptest::collection::vec(0.001f64..1.0, c * rows).prop_map(move |raw| {
        let mut m = Matrix::from_vec(rows, c, raw).unwrap();
        for r in 0..rows {
            let s: f64 = m.row(r).iter().sum();
            m.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
        PredictionMatrix::new(m).unwrap()
    })
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
fn spectral_radius(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut v = Matrix::from_vec(n, 1, (0..n).map(|i| 1.0 + i as f64 * 0.1).collect()).unwrap();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = m.matmul(&v).unwrap();
        lambda = w.frobenius_norm() / v.frobenius_norm();
        let norm = w.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w.map(|x| x / norm);
    }
    lambda
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamming_is_a_metric(a in graph_strategy(5), b in graph_strategy(5), c in graph_strategy(5)) {
        let ab = hamming_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, hamming_distance(&b, &a).unwrap());
        prop_assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        prop_assert_eq!(ab == 0, a.edges().eq(b.edges()));
        prop_assert!(hamming_distance(&a, &c).unwrap() <= ab + hamming_distance(&b, &c).unwrap());
    }

    #[test]
    fn normalization_symmetric_and_contractive(g in graph_strategy(6)) {
        let a = normalize_adjacency(&g);
        for i in 0..6 {
            for j in 0..6 {
                prop_assert!((a.get(i, j) - a.get(j, i)).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&a.get(i, j)));
                prop_assert_eq!(a.get(i, j) > 0.0, i == j || g.has_edge(i, j));
            }
        }
        prop_assert!(spectral_radius(&a) <= 1.0 + 1e-9);
        prop_assert_eq!(NormalizedAdjacency::new(&g).to_dense(), a);
    }

    #[test]
    fn forward_is_permutation_equivariant(g in graph_strategy(5), seed in 0u64..1000, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let p = init_parameters(seed, 3, 4, 2).unwrap();
        let base = forward(&p, &g).unwrap();
        let permuted = forward(&p, &g.permuted(&perm).unwrap()).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            for (a, b) in base.row(old).iter().zip(permuted.row(new)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
        for i in 0..5 {
            prop_assert!((base.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn update_rule_is_a_convex_combination(
        sigma in 0.0f64..=1.0,
        base in prediction_rows(3, 2),
        neighbors in proptest::collection::vec(prediction_rows(3, 2), 1..5),
        raw_weights in proptest::collection::vec(0.01f64..2.0, 5),
    ) {
        let weights = &raw_weights[..neighbors.len()];
        let out = update_rule(sigma, &base, weights, &neighbors).unwrap();
        for r in 0..2 {
            prop_assert!(out.row(r).iter().all(|&v| v >= 0.0));
            prop_assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let mut rev_n = neighbors.clone();
        rev_n.reverse();
        let rev_w: Vec<f64> = weights.iter().rev().copied().collect();
        let reversed = update_rule(sigma, &base, &rev_w, &rev_n).unwrap();
        prop_assert!(out.as_matrix().max_abs_diff(reversed.as_matrix()) <= 1e-12);
    }

    #[test]
    fn sigma_zero_is_scale_invariant(
        neighbors in proptest::collection::vec(prediction_rows(2, 3), 1..5),
        raw_weights in proptest::collection::vec(0.01f64..2.0, 5),
        scale in 0.001f64..1000.0,
    ) {
        let base = PredictionMatrix::uniform(3, 2);
        let weights = &raw_weights[..neighbors.len()];
        let scaled: Vec<f64> = weights.iter().map(|g| g * scale).collect();
        let a = update_rule(0.0, &base, weights, &neighbors).unwrap();
        let b = update_rule(0.0, &base, &scaled, &neighbors).unwrap();
        prop_assert!(a.as_matrix().max_abs_diff(b.as_matrix()) <= 1e-12);
    }

    #[test]
    fn structural_samples_stay_simple(g in graph_strategy(6), r in 0usize..=15, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let s = sample_structural_neighbor_with_radius(&mut rng, &g, r).unwrap();
        prop_assert!(s.graph.edges().all(|(a, b)| a < b));
        let d = hamming_distance(&g, &s.graph).unwrap();
        prop_assert!(d <= r);
        prop_assert_eq!(s.distance, robust_crf_core::sampler::NeighborDistance::Structural(d));
    }
}

#[test]
fn ball_bound_holds_exhaustively_for_small_graphs() {
    for n in [2usize, 3] {
        let positions = n * (n + 1) / 2;
        let g = Graph::new([], Matrix::zeros(n, 1), vec![0; n], 1).unwrap();
        for r in 1..positions {
            let exact = enumerate_hamming_ball(&g, r).unwrap() as f64;
            assert!(exact >= ball_lower_bound(n, r).unwrap(), "n={n} r={r}");
        }
    }
}

#[test]
fn ball_bound_increases_up_to_a_quarter() {
    for n in [4usize, 10, 30] {
        let quarter = n * (n + 1) / 4;
        let values: Vec<f64> = (1..=quarter).map(|r| ball_lower_bound(n, r).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] > w[0]), "n={n}");
    }
}
