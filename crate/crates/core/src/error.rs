use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid splits: {0}")]
    InvalidSplits(String),
    #[error("label out of range: node {node} has label {label} but num_classes is {num_classes}")]
    LabelOutOfRange { node: usize, label: usize, num_classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("node-count mismatch: {left} vs {right}")]
    NodeCountMismatch { left: usize, right: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty index set")]
    EmptyIndex,
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("degenerate weights: sigma + (1 - sigma) * sum(g) is zero")]
    DegenerateWeights,
    #[error("degenerate epsilon: r must satisfy 1 <= r < n(n+1)/2")]
    DegenerateEpsilon,
    #[error("radius {radius} exceeds the {available} available off-diagonal positions")]
    RadiusTooLarge { radius: usize, available: usize },
    #[error("enumeration guard exceeded: {positions} positions > {limit}")]
    EnumerationGuard { positions: usize, limit: usize },
    #[error("budget of {budget} modifications exceeds the {available} available")]
    BudgetTooLarge { budget: usize, available: usize },
    #[error("overflow: {0}")]
    Overflow(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
