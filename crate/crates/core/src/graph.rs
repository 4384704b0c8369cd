//! Graph data model, synthetic generation, GCN normalization and Hamming distance.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Undirected, unweighted graph with dense node features and labels.
///
/// Edges are stored once as `(i, j)` with `i < j`; the adjacency matrix is
/// implicitly symmetric with an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    edges: BTreeSet<(usize, usize)>,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Validates and builds a graph. Edges may be given in either orientation
    /// but each undirected edge at most once; self-loops are rejected.
    pub fn new(
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!("{} labels for {n} feature rows", labels.len())));
        }
        if !features.is_finite() {
            return Err(Error::InvalidGraph("non-finite feature".into()));
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { node, label, num_classes });
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a},{b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a},{b})")));
            }
        }
        Ok(Self { edges: set, features, labels, num_classes })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted `(i, j)` pairs with `i < j`.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Flips the off-diagonal position `(a, b)` in both triangles.
    pub(crate) fn toggle_edge(&mut self, a: usize, b: usize) {
        debug_assert!(a != b && a < self.num_nodes() && b < self.num_nodes());
        let key = (a.min(b), a.max(b));
        if !self.edges.remove(&key) {
            self.edges.insert(key);
        }
    }

    /// Same structure and labels, new features.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::ShapeMismatch(format!(
                "features {:?} do not match {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidGraph("non-finite feature".into()));
        }
        Ok(Self { edges: self.edges.clone(), features, labels: self.labels.clone(), num_classes: self.num_classes })
    }

    /// Neighbor lists, each sorted ascending.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Fraction of edges joining same-label endpoints; 0 for an edgeless graph.
    pub fn homophily(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        let intra = self.edges.iter().filter(|&&(a, b)| self.labels[a] == self.labels[b]).count();
        intra as f64 / self.edges.len() as f64
    }

    /// Copy of the graph with nodes relabeled so that old node `i` becomes
    /// node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::InvalidArgument("permutation length".into()));
        }
        let mut features = Matrix::zeros(n, self.num_features());
        let mut labels = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            features.row_mut(new).copy_from_slice(self.features.row(old));
            labels[new] = self.labels[old];
        }
        Graph::new(self.edges.iter().map(|&(a, b)| (perm[a], perm[b])), features, labels, self.num_classes)
    }
}

/// Disjoint train/validation/test node index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplits {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::InvalidSplits("train split is empty".into()));
        }
        let mut seen = vec![false; num_nodes];
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in idx.iter() {
                if i >= num_nodes {
                    return Err(Error::InvalidSplits(format!("{name} index {i} out of range for {num_nodes} nodes")));
                }
                if core::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidSplits(format!("node {i} appears more than once across splits")));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the stochastic-block-model generator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub class_shift: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { seed: 0, num_nodes: 200, num_classes: 2, p_in: 0.1, p_out: 0.01, feature_dim: 16, class_shift: 1.0 }
    }
}

/// Stochastic block model over equal-size classes with Gaussian features.
///
/// Node `i` belongs to class `i * C / n`. Features are `N(0, I)` shifted by
/// `class_shift` along the coordinate of the node's class. Splits are a
/// seeded shuffle cut 10% / 10% / 80%.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Graph, DatasetSplits)> {
    let SyntheticSpec { seed, num_nodes: n, num_classes: c, p_in, p_out, feature_dim: d, class_shift } = *spec;
    if c == 0 || c > n {
        return Err(Error::InvalidArgument(format!("num_classes {c} must be in 1..={n}")));
    }
    if !(0.0..=1.0).contains(&p_out) || !(0.0..=1.0).contains(&p_in) || p_out > p_in {
        return Err(Error::InvalidArgument(format!("need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")));
    }
    if d < c {
        return Err(Error::InvalidArgument(format!("feature_dim {d} must be at least num_classes {c}")));
    }
    if !class_shift.is_finite() {
        return Err(Error::InvalidArgument("class_shift must be finite".into()));
    }

    let mut rng = rng_from_seed(seed);
    let labels: Vec<usize> = (0..n).map(|i| i * c / n).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut features = Matrix::zeros(n, d);
    for i in 0..n {
        let row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        row[labels[i]] += class_shift;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (n / 10).max(1);
    let n_val = (n / 10).min(n - n_train);
    let splits = DatasetSplits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };

    let graph = Graph::new(edges, features, labels, c)?;
    Ok((graph, splits))
}

/// Sparse `D̃^{-1/2}(A+I)D̃^{-1/2}`, one sorted row of `(column, weight)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn new(graph: &Graph) -> Self {
        let adj = graph.adjacency_lists();
        let inv_sqrt: Vec<f64> = adj.iter().map(|l| 1.0 / libm::sqrt((l.len() + 1) as f64)).collect();
        let rows = adj
            .iter()
            .enumerate()
            .map(|(i, list)| {
                let mut row: Vec<(usize, f64)> = list.iter().map(|&j| (j, inv_sqrt[i] * inv_sqrt[j])).collect();
                let pos = row.partition_point(|&(j, _)| j < i);
                row.insert(pos, (i, inv_sqrt[i] * inv_sqrt[i]));
                row
            })
            .collect();
        Self { rows }
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `Â · m`. Since `Â` is symmetric this is also `Âᵀ · m`.
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.rows() != self.rows.len() {
            return Err(Error::ShapeMismatch(format!(
                "adjacency over {} nodes applied to {} rows",
                self.rows.len(),
                m.rows()
            )));
        }
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for (i, row) in self.rows.iter().enumerate() {
            let out_row = out.row_mut(i);
            for &(j, w) in row {
                for (o, &v) in out_row.iter_mut().zip(m.row(j)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.rows.len();
        let mut out = Matrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out.set(i, j, w);
            }
        }
        out
    }
}

/// Dense symmetric GCN normalization of `graph`'s adjacency.
pub fn normalize_adjacency(graph: &Graph) -> Matrix {
    NormalizedAdjacency::new(graph).to_dense()
}

/// Number of differing adjacency positions `i <= j`.
///
/// Diagonals are always empty, so this is the size of the symmetric
/// difference of the two edge sets.
pub fn hamming_distance(a: &Graph, b: &Graph) -> Result<usize> {
    if a.num_nodes() != b.num_nodes() {
        return Err(Error::NodeCountMismatch { left: a.num_nodes(), right: b.num_nodes() });
    }
    Ok(a.edges.symmetric_difference(&b.edges).count())
}

/// Number of adjacency positions `i <= j`, diagonal included.
pub fn upper_triangle_positions(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Number of off-diagonal positions `i < j`.
pub fn off_diagonal_positions(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps `k` in `0..n(n-1)/2` to the `k`-th pair `(i, j)`, `i < j`, in row-major order.
pub fn pair_from_index(n: usize, mut k: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row_len = n - i - 1;
        if k < row_len {
            return (i, i + 1 + k);
        }
        k -= row_len;
        i += 1;
    }
}
