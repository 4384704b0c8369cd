//! Two-layer graph convolutional classifier.
//!
//! `P = row_softmax(Â · ReLU(Â X W1) · W2)` with `Â` the symmetric
//! self-loop normalization from [`crate::graph::NormalizedAdjacency`].
//! Gradients are written out by hand; [`loss_and_gradients`] also returns
//! the gradient with respect to the node features for the PGD attack.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::graph::{DatasetSplits, Graph, NormalizedAdjacency};
use crate::matrix::Matrix;
use crate::metrics::accuracy;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Tag recorded in checkpoints for the adjacency normalization in use.
pub const NORMALIZATION_TAG: &str = "sym-self-loop";

/// Weights of the two-layer GCN.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParameters {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl GcnParameters {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(Error::ShapeMismatch(format!("w1 is {:?} but w2 is {:?}", w1.shape(), w2.shape())));
        }
        if w1.rows() == 0 || w1.cols() == 0 || w2.cols() == 0 {
            return Err(Error::ShapeMismatch("zero-sized weight matrix".into()));
        }
        if !w1.is_finite() || !w2.is_finite() {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(Self { w1, w2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }

    fn check_graph(&self, graph: &Graph) -> Result<()> {
        if graph.num_features() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "graph has {} features, model expects {}",
                graph.num_features(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Row-stochastic `n × C` matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix(Matrix);

impl PredictionMatrix {
    /// Wraps `m` after checking every row is non-negative and sums to 1 within 1e-9.
    pub fn new(m: Matrix) -> Result<Self> {
        for r in 0..m.rows() {
            let row = m.row(r);
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("prediction row {r} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("prediction row {r} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        Self(m)
    }

    pub fn uniform(rows: usize, classes: usize) -> Self {
        Self(Matrix::from_vec(rows, classes, alloc::vec![1.0 / classes as f64; rows * classes]).unwrap())
    }

    pub fn num_nodes(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Index of the largest entry of row `i`; ties go to the lowest class.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.0.row(i);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        best
    }
}

/// A black-box node classifier `f`.
pub trait Classifier {
    fn predict(&self, graph: &Graph) -> Result<PredictionMatrix>;
}

impl Classifier for GcnParameters {
    fn predict(&self, graph: &Graph) -> Result<PredictionMatrix> {
        forward(self, graph)
    }
}

impl<F> Classifier for F
where
    F: Fn(&Graph) -> Result<PredictionMatrix>,
{
    fn predict(&self, graph: &Graph) -> Result<PredictionMatrix> {
        self(graph)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub hidden_dim: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0, hidden_dim: 16 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("adam betas must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform initialization, deterministic in `seed`.
pub fn init_parameters(seed: u64, input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<GcnParameters> {
    if input_dim == 0 || hidden_dim == 0 || num_classes == 0 {
        return Err(Error::InvalidArgument("layer sizes must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let bound = libm::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    };
    let w1 = glorot(input_dim, hidden_dim);
    let w2 = glorot(hidden_dim, num_classes);
    GcnParameters::new(w1, w2)
}

fn row_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

struct Activations {
    /// `Â X`
    ax: Matrix,
    /// `Â X W1`, pre-activation
    z1: Matrix,
    /// `Â ReLU(Z1)`
    ah: Matrix,
    logits: Matrix,
}

fn activations(params: &GcnParameters, adj: &NormalizedAdjacency, x: &Matrix) -> Result<Activations> {
    let ax = adj.apply(x)?;
    let z1 = ax.matmul(&params.w1)?;
    let h = z1.map(|v| v.max(0.0));
    let ah = adj.apply(&h)?;
    let logits = ah.matmul(&params.w2)?;
    Ok(Activations { ax, z1, ah, logits })
}

/// Forward pass with a precomputed normalized adjacency.
pub fn forward_with(params: &GcnParameters, adj: &NormalizedAdjacency, features: &Matrix) -> Result<PredictionMatrix> {
    if features.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            params.input_dim()
        )));
    }
    let act = activations(params, adj, features)?;
    Ok(PredictionMatrix::new_unchecked(row_softmax(&act.logits)))
}

pub fn forward(params: &GcnParameters, graph: &Graph) -> Result<PredictionMatrix> {
    params.check_graph(graph)?;
    forward_with(params, &NormalizedAdjacency::new(graph), graph.features())
}

/// Alias of [`forward`].
pub fn predict(params: &GcnParameters, graph: &Graph) -> Result<PredictionMatrix> {
    forward(params, graph)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub w1: Matrix,
    pub w2: Matrix,
    pub x: Matrix,
}

/// Mean cross-entropy over `node_idx` and its gradients.
pub fn loss_and_gradients(params: &GcnParameters, graph: &Graph, node_idx: &[usize]) -> Result<Gradients> {
    params.check_graph(graph)?;
    loss_and_gradients_with(params, &NormalizedAdjacency::new(graph), graph.features(), graph.labels(), node_idx)
}

pub fn loss_and_gradients_with(
    params: &GcnParameters,
    adj: &NormalizedAdjacency,
    features: &Matrix,
    labels: &[usize],
    node_idx: &[usize],
) -> Result<Gradients> {
    if node_idx.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let n = features.rows();
    let c = params.num_classes();
    if let Some(&bad) = node_idx.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("node index {bad} out of range")));
    }
    let act = activations(params, adj, features)?;

    let scale = 1.0 / node_idx.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(n, c);
    for &i in node_idx {
        let row = act.logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| libm::exp(z - max)).sum();
        let log_z = max + libm::log(sum);
        loss += (log_z - row[labels[i]]) * scale;
        let d = d_logits.row_mut(i);
        for (k, dv) in d.iter_mut().enumerate() {
            // repeated indices accumulate, matching the mean over the list
            *dv += libm::exp(row[k] - log_z) * scale;
        }
        d[labels[i]] -= scale;
    }

    let grad_w2 = act.ah.t_matmul(&d_logits)?;
    let d_ah = d_logits.matmul_t(&params.w2)?;
    let mut d_z1 = adj.apply(&d_ah)?;
    for (g, &z) in d_z1.as_mut_slice().iter_mut().zip(act.z1.as_slice()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let grad_w1 = act.ax.t_matmul(&d_z1)?;
    let d_ax = d_z1.matmul_t(&params.w1)?;
    let grad_x = adj.apply(&d_ax)?;

    Ok(Gradients { loss, w1: grad_w1, w2: grad_w2, x: grad_x })
}

/// Bias-corrected Adam moments for both weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m1: Matrix,
    pub v1: Matrix,
    pub m2: Matrix,
    pub v2: Matrix,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &GcnParameters, beta1: f64, beta2: f64, eps: f64) -> Self {
        let (r1, c1) = params.w1.shape();
        let (r2, c2) = params.w2.shape();
        Self {
            m1: Matrix::zeros(r1, c1),
            v1: Matrix::zeros(r1, c1),
            m2: Matrix::zeros(r2, c2),
            v2: Matrix::zeros(r2, c2),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    w: &mut Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    g: &Matrix,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    step: u64,
) {
    let bc1 = 1.0 - libm::pow(b1, step as f64);
    let bc2 = 1.0 - libm::pow(b2, step as f64);
    let it = w.as_mut_slice().iter_mut().zip(m.as_mut_slice()).zip(v.as_mut_slice()).zip(g.as_slice());
    for (((w, m), v), &g) in it {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
}

/// One Adam step on `params` using the weight gradients in `grads`.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut GcnParameters,
    grad_w1: &Matrix,
    grad_w2: &Matrix,
    lr: f64,
) -> Result<()> {
    if grad_w1.shape() != params.w1.shape() || grad_w2.shape() != params.w2.shape() {
        return Err(Error::ShapeMismatch("gradient shapes do not match parameters".into()));
    }
    if state.m1.shape() != params.w1.shape() || state.m2.shape() != params.w2.shape() {
        return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    if !grad_w1.is_finite() || !grad_w2.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    state.step += 1;
    let (b1, b2, eps, t) = (state.beta1, state.beta2, state.eps, state.step);
    adam_update(&mut params.w1, &mut state.m1, &mut state.v1, grad_w1, lr, b1, b2, eps, t);
    adam_update(&mut params.w2, &mut state.m2, &mut state.v2, grad_w2, lr, b1, b2, eps, t);
    Ok(())
}

/// Per-epoch record kept by [`train_with_history`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

/// Full-batch training on the train split; returns the parameters from the
/// epoch with the best validation accuracy (ties go to the later epoch).
pub fn train(graph: &Graph, splits: &DatasetSplits, config: &TrainingConfig) -> Result<GcnParameters> {
    train_with_history(graph, splits, config).map(|(p, _)| p)
}

pub fn train_with_history(
    graph: &Graph,
    splits: &DatasetSplits,
    config: &TrainingConfig,
) -> Result<(GcnParameters, Vec<EpochStats>)> {
    config.validate()?;
    splits.validate(graph.num_nodes())?;
    let adj = NormalizedAdjacency::new(graph);
    let mut params = init_parameters(config.seed, graph.num_features(), config.hidden_dim, graph.num_classes())?;
    let mut adam = AdamState::new(&params, config.beta1, config.beta2, config.eps);
    // With no validation nodes, select on training accuracy instead.
    let select_idx = if splits.val.is_empty() { &splits.train } else { &splits.val };

    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let grads = loss_and_gradients_with(&params, &adj, graph.features(), graph.labels(), &splits.train)?;
        if !grads.loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
        }
        adam_step(&mut adam, &mut params, &grads.w1, &grads.w2, config.learning_rate)?;
        let pred = forward_with(&params, &adj, graph.features())?;
        let acc = accuracy(&pred, graph.labels(), select_idx)?;
        history.push(EpochStats { epoch, loss: grads.loss, val_accuracy: acc });
        if acc >= best_acc {
            best_acc = acc;
            best = params.clone();
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, SyntheticSpec};
    use alloc::vec;
    use alloc::vec::Vec;

    fn random_instance(seed: u64, n: usize, d: usize, c: usize) -> Graph {
        let mut rng = rng_from_seed(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.5 {
                    edges.push((i, j));
                }
            }
        }
        let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        Graph::new(edges, Matrix::from_vec(n, d, x).unwrap(), labels, c).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let g = random_instance(1, 4, 3, 3);
        let p = GcnParameters::new(Matrix::zeros(3, 2), Matrix::zeros(2, 3)).unwrap();
        let pred = forward(&p, &g).unwrap();
        for i in 0..4 {
            for &v in pred.row(i) {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn isolated_node_uses_identity_adjacency() {
        let x = Matrix::from_rows(&[vec![0.3, -1.2]]).unwrap();
        let g = Graph::new([], x.clone(), vec![0], 2).unwrap();
        let p = init_parameters(3, 2, 4, 2).unwrap();
        let h = x.matmul(&p.w1).unwrap().map(|v| v.max(0.0));
        let expected = row_softmax(&h.matmul(&p.w2).unwrap());
        assert_eq!(forward(&p, &g).unwrap().as_matrix(), &expected);
    }

    #[test]
    fn init_shapes_bounds_and_seed() {
        let p = init_parameters(9, 3, 2, 2).unwrap();
        assert_eq!(p.w1.shape(), (3, 2));
        assert_eq!(p.w2.shape(), (2, 2));
        let b1 = libm::sqrt(6.0 / 5.0);
        let b2 = libm::sqrt(6.0 / 4.0);
        assert!(p.w1.as_slice().iter().all(|v| v.abs() <= b1));
        assert!(p.w2.as_slice().iter().all(|v| v.abs() <= b2));
        assert_eq!(p, init_parameters(9, 3, 2, 2).unwrap());
        assert!(init_parameters(9, 0, 2, 2).is_err());
    }

    #[test]
    fn uniform_prediction_loss_is_ln2() {
        let g = random_instance(2, 5, 3, 2);
        let p = GcnParameters::new(Matrix::zeros(3, 4), Matrix::zeros(4, 2)).unwrap();
        let grads = loss_and_gradients(&p, &g, &[0, 1, 2]).unwrap();
        assert!((grads.loss - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss_and_gradients(&p, &g, &[]), Err(Error::EmptyIndex));
    }

    #[test]
    fn saturated_logits_give_near_zero_loss() {
        // one isolated node, feature 1, label 0; logits (50, -50)
        let g = Graph::new([], Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0], 2).unwrap();
        let w1 = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![50.0, -50.0]]).unwrap();
        let p = GcnParameters::new(w1, w2).unwrap();
        assert!(loss_and_gradients(&p, &g, &[0]).unwrap().loss < 1e-6);
    }

    #[test]
    fn adam_scalar_step() {
        let mut p = GcnParameters::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1)).unwrap();
        let mut s = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let one = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        adam_step(&mut s, &mut p, &one, &Matrix::zeros(1, 1), 0.01).unwrap();
        assert_eq!(s.step, 1);
        assert!((p.w1.get(0, 0) + 0.01).abs() < 1e-9);
        assert_eq!(p.w2.get(0, 0), 0.0);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = GcnParameters::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1)).unwrap();
        let mut s = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let nan = Matrix::from_vec(1, 1, vec![f64::NAN]).unwrap();
        assert!(matches!(adam_step(&mut s, &mut p, &nan, &Matrix::zeros(1, 1), 0.01), Err(Error::Diverged(_))));
    }

    #[test]
    fn training_separates_two_cliques() {
        let spec = SyntheticSpec {
            num_nodes: 40,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 4,
            class_shift: 3.0,
            ..SyntheticSpec::default()
        };
        let (g, splits) = generate_synthetic(&spec).unwrap();
        let cfg = TrainingConfig { epochs: 100, ..TrainingConfig::default() };
        let p = train(&g, &splits, &cfg).unwrap();
        let pred = forward(&p, &g).unwrap();
        assert!(accuracy(&pred, g.labels(), &splits.train).unwrap() >= 0.95);
        assert_eq!(p, train(&g, &splits, &cfg).unwrap());
        let bad = TrainingConfig { epochs: 0, ..cfg };
        assert!(train(&g, &splits, &bad).is_err());
    }
}
