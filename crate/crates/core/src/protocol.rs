//! Weighted try-once-discard scheduling of sensor nodes.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{block_diag, lambda_min};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("node partition must be non-empty with positive sizes, got {0:?}")]
    BadPartition(Vec<usize>),
    #[error("partition covers {found} outputs, model has {expected}")]
    PartitionSize { expected: usize, found: usize },
    #[error("weight {node} is {found:?}, expected {expected}x{expected}")]
    WeightShape { node: usize, expected: usize, found: (usize, usize) },
    #[error("weight {node} is not symmetric positive definite")]
    WeightNotPositive { node: usize },
    #[error("weighted selector for node {node} is not symmetric")]
    NonCommuting { node: usize },
}

impl NodePartition {
    pub fn new(dims: Vec<usize>) -> Result<Self, ProtocolError> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(ProtocolError::BadPartition(dims));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        Ok(Self { dims, offsets })
    }

    pub fn single(total: usize) -> Self {
        Self::new(vec![total]).expect("positive size")
    }

    pub fn nodes(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node] + self.dims[node]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WtodWeights {
    pub q: Vec<DMatrix<f64>>,
}

impl WtodWeights {
    pub fn identity(partition: &NodePartition) -> Self {
        Self { q: partition.dims().iter().map(|&d| DMatrix::identity(d, d)).collect() }
    }

    /// `Q̄ = diag(Q_1, …, Q_𝔐)`.
    pub fn q_bar(&self) -> DMatrix<f64> {
        let refs: Vec<&DMatrix<f64>> = self.q.iter().collect();
        block_diag(&refs)
    }

    /// Checks shapes, positive definiteness and that `Q̄Φ_m` is symmetric.
    pub fn validate(&self, partition: &NodePartition) -> Result<(), ProtocolError> {
        if self.q.len() != partition.nodes() {
            return Err(ProtocolError::PartitionSize { expected: partition.nodes(), found: self.q.len() });
        }
        for (m, q) in self.q.iter().enumerate() {
            let d = partition.dims()[m];
            if q.shape() != (d, d) {
                return Err(ProtocolError::WeightShape { node: m, expected: d, found: q.shape() });
            }
            if q != &q.transpose() || lambda_min(q) <= 0.0 {
                return Err(ProtocolError::WeightNotPositive { node: m });
            }
        }
        let qb = self.q_bar();
        for m in 0..partition.nodes() {
            let phi = selector_matrix(partition, m);
            if &qb * &phi != &phi * &qb {
                return Err(ProtocolError::NonCommuting { node: m });
            }
        }
        Ok(())
    }
}

/// Partition plus node weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WtodConfig {
    pub partition: NodePartition,
    pub weights: WtodWeights,
}

impl WtodConfig {
    pub fn new(partition: NodePartition, weights: WtodWeights) -> Result<Self, ProtocolError> {
        weights.validate(&partition)?;
        Ok(Self { partition, weights })
    }

    pub fn identity(partition: NodePartition) -> Self {
        let weights = WtodWeights::identity(&partition);
        Self { partition, weights }
    }

    pub fn nodes(&self) -> usize {
        self.partition.nodes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    pub y_bar: DVector<f64>,
}

impl SchedulerState {
    pub fn zero(ny: usize) -> Self {
        Self { y_bar: DVector::zeros(ny) }
    }
}

/// `Φ_m`: identity on node `m`'s output coordinates, zero elsewhere.
pub fn selector_matrix(partition: &NodePartition, node: usize) -> DMatrix<f64> {
    let p = partition.total();
    let mut phi = DMatrix::zeros(p, p);
    for k in partition.range(node) {
        phi[(k, k)] = 1.0;
    }
    phi
}

/// `‖y_m − ȳ_m‖²_{Q_m}` for every node.
pub fn weighted_deviations(
    state: &SchedulerState,
    y: &DVector<f64>,
    weights: &WtodWeights,
    partition: &NodePartition,
) -> Vec<f64> {
    (0..partition.nodes())
        .map(|m| {
            let r = partition.range(m);
            let d = y.rows(r.start, r.len()) - state.y_bar.rows(r.start, r.len());
            (d.transpose() * &weights.q[m] * &d)[(0, 0)]
        })
        .collect()
}

/// Node with the largest weighted deviation; ties go to the smallest index.
pub fn select_node(
    state: &SchedulerState,
    y: &DVector<f64>,
    weights: &WtodWeights,
    partition: &NodePartition,
) -> usize {
    let dev = weighted_deviations(state, y, weights, partition);
    let mut best = 0;
    for (m, &v) in dev.iter().enumerate().skip(1) {
        if v > dev[best] {
            best = m;
        }
    }
    best
}

/// `ȳ(k) = Φ_o y(k) + (I − Φ_o) ȳ(k−1)`.
pub fn update_transmitted(
    state: &SchedulerState,
    y: &DVector<f64>,
    node: usize,
    partition: &NodePartition,
) -> SchedulerState {
    let mut y_bar = state.y_bar.clone();
    for k in partition.range(node) {
        y_bar[k] = y[k];
    }
    SchedulerState { y_bar }
}
