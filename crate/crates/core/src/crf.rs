//! Mean-field CRF smoothing of classifier outputs.
//!
//! Each input `a` is a CRF node tied to its own model output `Y_a` with
//! weight `σ` and to sampled neighbors `b` inside its perturbation ball with
//! weights `(1 − σ)·g_ab`. The closed-form coordinate-ascent update is
//!
//! ```text
//! Ỹ_a = (σ·Y_a + (1−σ)·Σ_b g_ab·Ỹ_b) / (σ + (1−σ)·Σ_b g_ab)
//! ```
//!
//! and `K` iterations are realized as a depth-`K` tree: every tree node draws
//! `L` fresh neighbors whose smoothed outputs come from depth `K − 1`.

use alloc::format;
use alloc::vec::Vec;

use crate::gcn::{Classifier, PredictionMatrix};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::rng::{child_rng, derive_seed};
use crate::sampler::{
    prior_similarity, sample_feature_neighbor, sample_structural_neighbor_with_radius, FeatureSampleConfig,
    NeighborDistance, NeighborSample, StructuralSampleConfig,
};
use crate::{Error, Result};

/// How the pairwise weight `g_ab` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SimilarityMode {
    /// Cosine similarity of the flattened feature matrices, clamped at 0.
    Cosine,
    /// `C(r, d) / 2^r` for a structural neighbor at Hamming distance `d`.
    #[cfg_attr(feature = "serde", serde(rename = "prior"))]
    BinomialPrior,
    /// `g ≡ 1`.
    Uniform,
}

/// Which perturbation ball neighbors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BallKind {
    Feature,
    Structure,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CrfConfig {
    pub sigma: f64,
    pub num_samples: usize,
    pub num_iterations: usize,
    pub mode: SimilarityMode,
    /// Structural radius as a fraction of the edge count.
    #[cfg_attr(feature = "serde", serde(default = "default_p_r"))]
    pub p_r: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_feature_radius"))]
    pub feature_radius: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    /// Overrides the ball implied by `mode`; only meaningful for `Uniform`.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub ball: Option<BallKind>,
}

#[cfg(feature = "serde")]
fn default_p_r() -> f64 {
    0.02
}

#[cfg(feature = "serde")]
fn default_feature_radius() -> f64 {
    0.1
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            sigma: 0.9,
            num_samples: 5,
            num_iterations: 2,
            mode: SimilarityMode::Cosine,
            p_r: 0.02,
            feature_radius: 0.1,
            seed: 0,
            ball: None,
        }
    }
}

impl CrfConfig {
    /// `σ = 0`, `K = 1`, uniform weights: plain randomized smoothing.
    pub fn randomized_smoothing(num_samples: usize, ball: BallKind) -> Self {
        Self {
            sigma: 0.0,
            num_samples,
            num_iterations: 1,
            mode: SimilarityMode::Uniform,
            ball: Some(ball),
            ..Self::default()
        }
    }

    pub fn ball_kind(&self) -> BallKind {
        self.ball.unwrap_or(match self.mode {
            SimilarityMode::BinomialPrior => BallKind::Structure,
            SimilarityMode::Cosine | SimilarityMode::Uniform => BallKind::Feature,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidArgument(format!("sigma must be in [0, 1], got {}", self.sigma)));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
        }
        if self.sigma == 0.0 && self.num_iterations == 0 {
            return Err(Error::InvalidArgument("sigma = 0 requires num_iterations >= 1".into()));
        }
        match (self.mode, self.ball_kind()) {
            (SimilarityMode::Cosine, BallKind::Structure) => {
                return Err(Error::InvalidArgument("cosine mode requires the feature ball".into()))
            }
            (SimilarityMode::BinomialPrior, BallKind::Feature) => {
                return Err(Error::InvalidArgument("prior mode requires the structure ball".into()))
            }
            _ => {}
        }
        match self.ball_kind() {
            BallKind::Feature => {
                FeatureSampleConfig::new(self.feature_radius)?;
            }
            BallKind::Structure => {
                StructuralSampleConfig::new(self.p_r)?;
            }
        }
        Ok(())
    }
}

/// Cosine of the angle between the flattened matrices, clamped to `[−1, 1]`;
/// 0 when either is all zeros.
pub fn cosine_similarity(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.as_slice().iter().zip(y.as_slice()) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (libm::sqrt(nx) * libm::sqrt(ny))).clamp(-1.0, 1.0))
}

/// One mean-field update of `base` against weighted neighbor predictions.
pub fn update_rule(
    sigma: f64,
    base: &PredictionMatrix,
    weights: &[f64],
    neighbors: &[PredictionMatrix],
) -> Result<PredictionMatrix> {
    if weights.len() != neighbors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} neighbor predictions",
            weights.len(),
            neighbors.len()
        )));
    }
    if let Some(g) = weights.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument(format!("similarity {g} is negative or non-finite")));
    }
    let shape = base.as_matrix().shape();
    if let Some(p) = neighbors.iter().find(|p| p.as_matrix().shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "neighbor prediction {:?} vs base {:?}",
            p.as_matrix().shape(),
            shape
        )));
    }
    let total: f64 = weights.iter().sum();
    let denom = sigma + (1.0 - sigma) * total;
    if !(denom > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let mut acc = Matrix::zeros(shape.0, shape.1);
    for (&g, p) in weights.iter().zip(neighbors) {
        for (a, &v) in acc.as_mut_slice().iter_mut().zip(p.as_matrix().as_slice()) {
            *a += g * v;
        }
    }
    let mut out = base.as_matrix().clone();
    for (o, &a) in out.as_mut_slice().iter_mut().zip(acc.as_slice()) {
        *o = (sigma * *o + (1.0 - sigma) * a) / denom;
    }
    Ok(PredictionMatrix::new_unchecked(out))
}

/// Exact number of model calls made by a depth-`K` tree with `L` samples per node.
pub fn model_call_count(num_samples: u64, num_iterations: u32) -> Result<u64> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    if num_samples == 1 {
        return Ok(num_iterations as u64 + 1);
    }
    let limit = 1u64 << 62;
    let mut power: u64 = 1;
    for _ in 0..=num_iterations {
        power = power
            .checked_mul(num_samples)
            .filter(|&p| p <= limit)
            .ok_or_else(|| Error::Overflow(format!("{num_samples}^{} exceeds 2^62", num_iterations + 1)))?;
    }
    Ok((power - 1) / (num_samples - 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ball {
    Feature(FeatureSampleConfig),
    Structure { radius: usize },
}

/// A validated [`CrfConfig`] bound to the radius of a particular root graph.
///
/// The structural radius `⌊p_r·m⌋` is fixed from the root graph and reused at
/// every depth of the tree. Seeds follow the tree path: the neighbor `i` of a
/// tree node with seed `s` is drawn from `child_rng(s, 2i)` and its subtree
/// uses seed `derive_seed(s, 2i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingPlan {
    config: CrfConfig,
    ball: Ball,
}

impl SmoothingPlan {
    pub fn new(config: &CrfConfig, root: &Graph) -> Result<Self> {
        config.validate()?;
        let ball = match config.ball_kind() {
            BallKind::Feature => Ball::Feature(FeatureSampleConfig::new(config.feature_radius)?),
            BallKind::Structure => Ball::Structure { radius: StructuralSampleConfig::new(config.p_r)?.radius(root) },
        };
        Ok(Self { config: config.clone(), ball })
    }

    pub fn config(&self) -> &CrfConfig {
        &self.config
    }

    /// Structural radius, if neighbors come from the Hamming ball.
    pub fn structural_radius(&self) -> Option<usize> {
        match self.ball {
            Ball::Structure { radius } => Some(radius),
            Ball::Feature(_) => None,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.config.seed
    }

    pub fn child_seed(node_seed: u64, index: usize) -> u64 {
        derive_seed(node_seed, 2 * index as u64 + 1)
    }

    /// The `index`-th neighbor of the tree node with seed `node_seed`.
    pub fn neighbor(&self, graph: &Graph, node_seed: u64, index: usize) -> Result<NeighborSample> {
        let mut rng = child_rng(node_seed, 2 * index as u64);
        match self.ball {
            Ball::Feature(cfg) => sample_feature_neighbor(&mut rng, graph, &cfg),
            Ball::Structure { radius } => sample_structural_neighbor_with_radius(&mut rng, graph, radius),
        }
    }

    /// `g_ab` of a sampled neighbor under the configured mode.
    pub fn weight(&self, center: &Graph, sample: &NeighborSample) -> Result<f64> {
        match self.config.mode {
            SimilarityMode::Uniform => Ok(1.0),
            SimilarityMode::Cosine => Ok(cosine_similarity(center.features(), sample.graph.features())?.max(0.0)),
            SimilarityMode::BinomialPrior => match (sample.distance, self.ball) {
                (NeighborDistance::Structural(d), Ball::Structure { radius }) => prior_similarity(radius, d),
                _ => Err(Error::InvalidArgument("prior similarity needs a structural neighbor".into())),
            },
        }
    }

    pub fn combine(
        &self,
        base: &PredictionMatrix,
        weights: &[f64],
        neighbors: &[PredictionMatrix],
    ) -> Result<PredictionMatrix> {
        update_rule(self.config.sigma, base, weights, neighbors)
    }

    /// Smoothed predictions for the root input.
    pub fn smooth<C: Classifier + ?Sized>(&self, model: &C, graph: &Graph) -> Result<PredictionMatrix> {
        self.smooth_at(model, graph, self.config.num_iterations, self.root_seed())
    }

    /// Smoothed predictions of a tree node at the given remaining depth.
    pub fn smooth_at<C: Classifier + ?Sized>(
        &self,
        model: &C,
        graph: &Graph,
        depth: usize,
        node_seed: u64,
    ) -> Result<PredictionMatrix> {
        let base = model.predict(graph)?;
        if depth == 0 {
            return Ok(base);
        }
        let l = self.config.num_samples;
        let mut weights = Vec::with_capacity(l);
        let mut preds = Vec::with_capacity(l);
        for i in 0..l {
            let sample = self.neighbor(graph, node_seed, i)?;
            weights.push(self.weight(graph, &sample)?);
            preds.push(self.smooth_at(model, &sample.graph, depth - 1, Self::child_seed(node_seed, i))?);
        }
        self.combine(&base, &weights, &preds)
    }
}

/// Validates `config`, binds it to `graph` and runs the smoothing tree.
pub fn smooth_predictions<C: Classifier + ?Sized>(
    model: &C,
    graph: &Graph,
    config: &CrfConfig,
) -> Result<PredictionMatrix> {
    SmoothingPlan::new(config, graph)?.smooth(model, graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::sync::atomic::{AtomicUsize, Ordering};

    fn pm(rows: &[Vec<f64>]) -> PredictionMatrix {
        PredictionMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&a, &c).unwrap(), 0.0);
        assert!((cosine_similarity(&a, &b).unwrap() - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_similarity(&a, &Matrix::zeros(1, 2)).unwrap(), 0.0);
        assert!(cosine_similarity(&a, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn update_rule_examples() {
        let base = pm(&[vec![1.0, 0.0]]);
        let nb = pm(&[vec![0.0, 1.0]]);
        assert_eq!(update_rule(1.0, &base, &[3.0], core::slice::from_ref(&nb)).unwrap(), base);
        let half = update_rule(0.5, &base, &[1.0], core::slice::from_ref(&nb)).unwrap();
        assert_eq!(half.row(0), &[0.5, 0.5]);

        let base = pm(&[vec![0.6, 0.4]]);
        let n1 = pm(&[vec![0.2, 0.8]]);
        let n2 = pm(&[vec![0.4, 0.6]]);
        let out = update_rule(0.9, &base, &[0.5, 0.25], &[n1, n2]).unwrap();
        assert!((out.row(0)[0] - 0.56 / 0.975).abs() < 1e-12);
        assert!((out.row(0)[1] - 0.415 / 0.975).abs() < 1e-12);
    }

    #[test]
    fn update_rule_errors() {
        let base = pm(&[vec![1.0, 0.0]]);
        let nb = pm(&[vec![0.0, 1.0]]);
        assert_eq!(update_rule(0.0, &base, &[0.0], core::slice::from_ref(&nb)), Err(Error::DegenerateWeights));
        assert_eq!(update_rule(0.0, &base, &[], &[]), Err(Error::DegenerateWeights));
        assert!(update_rule(0.5, &base, &[-1.0], core::slice::from_ref(&nb)).is_err());
        assert!(update_rule(0.5, &base, &[1.0, 1.0], &[nb]).is_err());
    }

    #[test]
    fn call_counts() {
        assert_eq!(model_call_count(5, 0).unwrap(), 1);
        assert_eq!(model_call_count(1, 3).unwrap(), 4);
        assert_eq!(model_call_count(5, 2).unwrap(), 31);
        assert_eq!(model_call_count(10, 2).unwrap(), 111);
        assert!(model_call_count(2, 62).is_err());
        assert!(model_call_count(0, 1).is_err());
    }

    fn toy_graph() -> Graph {
        let x = Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.2, 0.1]]).unwrap();
        Graph::new([(0, 1), (1, 2)], x, vec![0, 1, 0], 2).unwrap()
    }

    /// Softmax of the raw features plus degree; depends on both structure and features.
    fn toy_model(g: &Graph) -> Result<PredictionMatrix> {
        let adj = g.adjacency_lists();
        let mut m = g.features().clone();
        for (i, nbrs) in adj.iter().enumerate() {
            let row = m.row_mut(i);
            row[0] += nbrs.len() as f64;
            let (a, b) = (libm::exp(row[0]), libm::exp(row[1]));
            row[0] = a / (a + b);
            row[1] = b / (a + b);
        }
        PredictionMatrix::new(m)
    }

    #[test]
    fn tree_counts_model_calls() {
        let calls = AtomicUsize::new(0);
        let model = |g: &Graph| {
            calls.fetch_add(1, Ordering::Relaxed);
            toy_model(g)
        };
        let cfg = CrfConfig { num_samples: 5, num_iterations: 2, ..CrfConfig::default() };
        smooth_predictions(&model, &toy_graph(), &cfg).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 31);
    }

    #[test]
    fn depth_zero_is_the_model() {
        let g = toy_graph();
        let cfg = CrfConfig { num_iterations: 0, ..CrfConfig::default() };
        assert_eq!(smooth_predictions(&toy_model, &g, &cfg).unwrap(), toy_model(&g).unwrap());
    }

    #[test]
    fn prior_mode_uses_hamming_ball() {
        let g = toy_graph();
        let cfg = CrfConfig { sigma: 0.3, mode: SimilarityMode::BinomialPrior, p_r: 1.0, ..CrfConfig::default() };
        let plan = SmoothingPlan::new(&cfg, &g).unwrap();
        assert_eq!(plan.structural_radius(), Some(2));
        let out = plan.smooth(&toy_model, &g).unwrap();
        assert_eq!(out, plan.smooth(&toy_model, &g).unwrap());
        PredictionMatrix::new(out.into_matrix()).unwrap();
    }

    #[test]
    fn config_validation() {
        assert!(CrfConfig { sigma: 1.5, ..CrfConfig::default() }.validate().is_err());
        assert!(CrfConfig { num_samples: 0, ..CrfConfig::default() }.validate().is_err());
        assert!(CrfConfig { sigma: 0.0, num_iterations: 0, ..CrfConfig::default() }.validate().is_err());
        let mismatched = CrfConfig { ball: Some(BallKind::Structure), ..CrfConfig::default() };
        assert!(mismatched.validate().is_err());
        CrfConfig::randomized_smoothing(5, BallKind::Structure).validate().unwrap();
    }
}
