//! Random CRF neighbors inside the radius-`r` ball around an input graph.
//!
//! Structural neighbors use stratified sampling: a distance `d` is drawn with
//! probability `C(r, d) / 2^r`, then `d` distinct off-diagonal positions are
//! flipped. Feature neighbors are drawn uniformly from the L2 ball over the
//! flattened feature matrix. Also provides the entropy lower bound on the
//! size of the Hamming ball and an exhaustive enumeration to check it.

use alloc::format;

use rand_distr::{Distribution, StandardNormal};

use crate::graph::{off_diagonal_positions, pair_from_index, upper_triangle_positions, Graph};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Structural radius expressed as a fraction of the edge count.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StructuralSampleConfig {
    pub p_r: f64,
}

impl StructuralSampleConfig {
    pub fn new(p_r: f64) -> Result<Self> {
        if !(p_r > 0.0 && p_r <= 1.0) {
            return Err(Error::InvalidArgument(format!("p_r must be in (0, 1], got {p_r}")));
        }
        Ok(Self { p_r })
    }

    /// `⌊p_r · m⌋` with `m` the number of edges of `graph`.
    pub fn radius(&self, graph: &Graph) -> usize {
        libm::floor(self.p_r * graph.num_edges() as f64) as usize
    }
}

/// L2 radius over the flattened `n × D` feature matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureSampleConfig {
    pub radius: f64,
}

impl FeatureSampleConfig {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("feature radius must be positive and finite, got {radius}")));
        }
        Ok(Self { radius })
    }
}

/// Distance of a sampled neighbor from its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeighborDistance {
    Structural(usize),
    Feature(f64),
}

/// A perturbed input `b` with its distance to the center and similarity `g_ab`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSample {
    pub graph: Graph,
    pub distance: NeighborDistance,
    pub similarity: f64,
}

/// `ln C(n, k)` through the log-gamma function.
pub fn log_binomial_coefficient(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    if k == 0 || k == n {
        return Ok(0.0);
    }
    let (n, k) = (n as f64, k as f64);
    Ok(libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0))
}

/// `C(r, d) / 2^r`, evaluated in log space; underflow saturates to 0.
pub fn binomial_half_pmf(r: usize, d: usize) -> Result<f64> {
    let log_c = log_binomial_coefficient(r as u64, d as u64)?;
    Ok(libm::exp(log_c - r as f64 * core::f64::consts::LN_2))
}

/// Draws `d ~ Binomial(r, 1/2)` by inverting the cumulative distribution.
pub fn sample_distance<R: rand::Rng + ?Sized>(rng: &mut R, r: usize) -> usize {
    if r == 0 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut cdf = 0.0;
    for d in 0..r {
        cdf += binomial_half_pmf(r, d).expect("d < r");
        if u < cdf {
            return d;
        }
    }
    r
}

/// Flips exactly `d` distinct off-diagonal positions of `graph`.
pub fn flip_random_positions<R: rand::Rng + ?Sized>(rng: &mut R, graph: &Graph, d: usize) -> Result<Graph> {
    let n = graph.num_nodes();
    let available = off_diagonal_positions(n);
    if d > available {
        return Err(Error::RadiusTooLarge { radius: d, available });
    }
    let mut out = graph.clone();
    for k in rand::seq::index::sample(rng, available, d).into_iter() {
        let (i, j) = pair_from_index(n, k);
        out.toggle_edge(i, j);
    }
    Ok(out)
}

/// Stratified structural neighbor at radius `r`. The similarity is the prior
/// `C(r, d) / 2^r` of the drawn distance.
pub fn sample_structural_neighbor_with_radius<R: rand::Rng + ?Sized>(
    rng: &mut R,
    graph: &Graph,
    r: usize,
) -> Result<NeighborSample> {
    let available = off_diagonal_positions(graph.num_nodes());
    if r > available {
        return Err(Error::RadiusTooLarge { radius: r, available });
    }
    let d = sample_distance(rng, r);
    let perturbed = flip_random_positions(rng, graph, d)?;
    Ok(NeighborSample {
        graph: perturbed,
        distance: NeighborDistance::Structural(d),
        similarity: prior_similarity(r, d)?,
    })
}

pub fn sample_structural_neighbor<R: rand::Rng + ?Sized>(
    rng: &mut R,
    graph: &Graph,
    config: &StructuralSampleConfig,
) -> Result<NeighborSample> {
    sample_structural_neighbor_with_radius(rng, graph, config.radius(graph))
}

/// Uniform draw from the L2 ball of radius `config.radius` around the
/// flattened features. The similarity is the cosine similarity of the two
/// feature matrices, clamped at 0.
pub fn sample_feature_neighbor<R: rand::Rng + ?Sized>(
    rng: &mut R,
    graph: &Graph,
    config: &FeatureSampleConfig,
) -> Result<NeighborSample> {
    let x = graph.features();
    let dim = x.rows() * x.cols();
    if dim == 0 {
        return Ok(NeighborSample { graph: graph.clone(), distance: NeighborDistance::Feature(0.0), similarity: 0.0 });
    }
    let mut delta = Matrix::zeros(x.rows(), x.cols());
    let norm = loop {
        for v in delta.as_mut_slice() {
            *v = StandardNormal.sample(rng);
        }
        let norm = delta.frobenius_norm();
        if norm > 0.0 {
            break norm;
        }
    };
    let u: f64 = rng.random();
    let scale = config.radius * libm::pow(u, 1.0 / dim as f64) / norm;
    let mut perturbed = x.clone();
    for (p, d) in perturbed.as_mut_slice().iter_mut().zip(delta.as_mut_slice()) {
        *d *= scale;
        *p += *d;
    }
    let similarity = crate::crf::cosine_similarity(x, &perturbed)?.max(0.0);
    Ok(NeighborSample {
        graph: graph.with_features(perturbed)?,
        distance: NeighborDistance::Feature(delta.frobenius_norm()),
        similarity,
    })
}

/// Prior similarity `C(r, d) / 2^r` of a structural neighbor at distance `d`.
pub fn prior_similarity(r: usize, d: usize) -> Result<f64> {
    if d > r {
        return Err(Error::InvalidArgument(format!("distance {d} exceeds radius {r}")));
    }
    binomial_half_pmf(r, d)
}

/// Binary entropy in bits; `H(0) = H(1) = 0`.
pub fn binary_entropy(eps: f64) -> f64 {
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * libm::log2(p) };
    term(eps) + term(1.0 - eps)
}

/// `ε = 2r / (n(n+1))`.
pub fn ball_epsilon(n: usize, r: usize) -> f64 {
    r as f64 / upper_triangle_positions(n) as f64
}

/// Base-2 logarithm of [`ball_lower_bound`]; finite for any graph size.
pub fn ball_lower_bound_log2(n: usize, r: usize) -> Result<f64> {
    let positions = upper_triangle_positions(n);
    if r == 0 || r >= positions {
        return Err(Error::DegenerateEpsilon);
    }
    let eps = ball_epsilon(n, r);
    let nn1 = (n * (n + 1)) as f64;
    let denom = 4.0 * nn1 * eps * (1.0 - eps);
    Ok(binary_entropy(eps) * nn1 / 2.0 - 0.5 * libm::log2(denom))
}

/// Lower bound `2^{H(ε) n(n+1)/2} / √(4 n(n+1) ε(1−ε))` on the number of
/// graphs within Hamming distance `r`.
pub fn ball_lower_bound(n: usize, r: usize) -> Result<f64> {
    let bound = libm::exp2(ball_lower_bound_log2(n, r)?);
    if !bound.is_finite() {
        return Err(Error::Overflow(format!("bound for n={n}, r={r} exceeds f64")));
    }
    Ok(bound)
}

/// Largest number of adjacency positions [`enumerate_hamming_ball`] will walk.
pub const ENUMERATION_LIMIT: usize = 24;

/// Counts every adjacency matrix over positions `i <= j` within Hamming
/// distance `r` of `graph` by generating all `2^{n(n+1)/2}` of them.
pub fn enumerate_hamming_ball(graph: &Graph, r: usize) -> Result<u64> {
    let n = graph.num_nodes();
    let positions = upper_triangle_positions(n);
    if positions > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard { positions, limit: ENUMERATION_LIMIT });
    }
    let mut center: u32 = 0;
    let mut bit = 0;
    for i in 0..n {
        for j in i..n {
            if graph.has_edge(i, j) {
                center |= 1 << bit;
            }
            bit += 1;
        }
    }
    let count = (0u32..1 << positions).filter(|&adj| ((adj ^ center).count_ones() as usize) <= r).count();
    Ok(count as u64)
}

/// `Σ_{d ≤ r} C(positions, d)`, exact for up to 127 positions.
pub fn hamming_ball_size(positions: usize, r: usize) -> Option<u128> {
    if positions > 127 {
        return None;
    }
    let mut total: u128 = 0;
    let mut c: u128 = 1;
    for d in 0..=r.min(positions) {
        total += c;
        c = c * (positions - d) as u128 / (d + 1) as u128;
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::hamming_distance;
    use crate::rng::rng_from_seed;
    use alloc::vec;

    fn empty(n: usize) -> Graph {
        Graph::new([], Matrix::zeros(n, 2), vec![0; n], 1).unwrap()
    }

    #[test]
    fn small_binomials() {
        assert!((libm::exp(log_binomial_coefficient(2, 1).unwrap()) - 2.0).abs() < 1e-12);
        assert!((libm::exp(log_binomial_coefficient(4, 2).unwrap()) - 6.0).abs() < 1e-12);
        assert!(log_binomial_coefficient(2, 3).is_err());
    }

    #[test]
    fn prior_values() {
        assert!((prior_similarity(2, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((prior_similarity(4, 2).unwrap() - 0.375).abs() < 1e-15);
        assert!(prior_similarity(2, 3).is_err());
        assert_eq!(prior_similarity(3000, 0).unwrap(), 0.0);
    }

    #[test]
    fn zero_radius_is_identity() {
        let mut rng = rng_from_seed(1);
        let g = empty(4);
        for _ in 0..10 {
            assert_eq!(sample_distance(&mut rng, 0), 0);
            let s = sample_structural_neighbor_with_radius(&mut rng, &g, 0).unwrap();
            assert_eq!(s.graph, g);
            assert_eq!(s.distance, NeighborDistance::Structural(0));
        }
    }

    #[test]
    fn structural_distance_matches_reported() {
        let mut rng = rng_from_seed(2);
        let g = Graph::new([(0, 1), (2, 3)], Matrix::zeros(5, 1), vec![0; 5], 1).unwrap();
        for _ in 0..200 {
            let s = sample_structural_neighbor_with_radius(&mut rng, &g, 6).unwrap();
            let NeighborDistance::Structural(d) = s.distance else { panic!() };
            assert!(d <= 6);
            assert_eq!(hamming_distance(&g, &s.graph).unwrap(), d);
            assert_eq!(s.graph.features(), g.features());
        }
    }

    #[test]
    fn structural_radius_guard() {
        let mut rng = rng_from_seed(3);
        assert!(matches!(
            sample_structural_neighbor_with_radius(&mut rng, &empty(3), 4),
            Err(Error::RadiusTooLarge { radius: 4, available: 3 })
        ));
    }

    #[test]
    fn feature_neighbor_within_ball() {
        let mut rng = rng_from_seed(4);
        let g = Graph::new([], Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0; 2], 1).unwrap();
        let cfg = FeatureSampleConfig::new(0.5).unwrap();
        for _ in 0..100 {
            let s = sample_feature_neighbor(&mut rng, &g, &cfg).unwrap();
            let NeighborDistance::Feature(dist) = s.distance else { panic!() };
            assert!(dist <= 0.5 + 1e-12);
            assert_eq!(s.graph.num_edges(), 0);
        }
        let tiny = FeatureSampleConfig::new(1e-300).unwrap();
        let s = sample_feature_neighbor(&mut rng, &g, &tiny).unwrap();
        assert_eq!(s.graph.features(), g.features());
        assert!(FeatureSampleConfig::new(0.0).is_err());
    }

    #[test]
    fn lower_bound_closed_form() {
        // L = 3, ε = 1/3: 2^{3 H(1/3)} = 27/4, denominator √(16/3)
        let b = ball_lower_bound(2, 1).unwrap();
        assert!((b - 6.75 * libm::sqrt(3.0) / 4.0).abs() < 1e-12);
        assert!(b <= 4.0);
        assert_eq!(ball_lower_bound(2, 0), Err(Error::DegenerateEpsilon));
        assert_eq!(ball_lower_bound(2, 3), Err(Error::DegenerateEpsilon));
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_hamming_ball(&empty(2), 0).unwrap(), 1);
        assert_eq!(enumerate_hamming_ball(&empty(2), 3).unwrap(), 8);
        assert_eq!(enumerate_hamming_ball(&empty(3), 2).unwrap(), 22);
        assert_eq!(hamming_ball_size(6, 2), Some(22));
        assert!(matches!(enumerate_hamming_ball(&empty(7), 1), Err(Error::EnumerationGuard { .. })));
    }
}
