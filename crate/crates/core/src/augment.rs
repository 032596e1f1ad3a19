//! Protocol-augmented plant, estimator error system and the stacked closed loop.
//!
//! The augmented state is `x̄ = [x; ȳ(k−1)]` of size `a = n + p`. The stacked
//! state is `η = [x̄; e]` with `e = x̄ − x̂`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{block_diag, hstack, vstack};
use crate::model::MjnnModel;
use crate::protocol::{selector_matrix, NodePartition};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("index out of range: mode {mode} of {modes}, node {node} of {nodes}")]
    IndexOutOfRange { mode: usize, modes: usize, node: usize, nodes: usize },
    #[error("partition covers {found} outputs, model has {expected}")]
    PartitionSize { expected: usize, found: usize },
    #[error("gain grid mismatch: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub phi: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub d1_bar: DMatrix<f64>,
    pub e_bar: DMatrix<f64>,
    pub d2_bar: DMatrix<f64>,
    pub m_bar: DMatrix<f64>,
}

pub fn build_augmented(
    model: &MjnnModel,
    partition: &NodePartition,
    mode: usize,
    node: usize,
) -> Result<AugmentedPlant, AugmentError> {
    if mode >= model.n_modes() || node >= partition.nodes() {
        return Err(AugmentError::IndexOutOfRange {
            mode,
            modes: model.n_modes(),
            node,
            nodes: partition.nodes(),
        });
    }
    let (n, p, r) = (model.nx(), model.ny(), model.nw());
    if partition.total() != p {
        return Err(AugmentError::PartitionSize { expected: p, found: partition.total() });
    }
    let md = &model.modes[mode];
    let phi = selector_matrix(partition, node);
    let i_phi = DMatrix::identity(p, p) - &phi;
    let phi_e = &phi * &md.e;
    let phi_d2 = &phi * &md.d2;
    let e_bar = hstack(&[&phi_e, &i_phi]);
    let a_bar = vstack(&[&hstack(&[&md.a, &DMatrix::zeros(n, p)]), &e_bar]);
    let b_bar = block_diag(&[&md.b, &DMatrix::zeros(p, n)]);
    let c_bar = block_diag(&[&md.c, &DMatrix::zeros(p, n)]);
    let d1_bar = block_diag(&[&md.d1, &phi_d2]);
    let d2_bar = hstack(&[&DMatrix::zeros(p, r), &phi_d2]);
    let m_bar = hstack(&[&md.m, &DMatrix::zeros(model.nz(), p)]);
    Ok(AugmentedPlant { phi, a_bar, b_bar, c_bar, d1_bar, e_bar, d2_bar, m_bar })
}

/// Augmented plants for every `(mode, node)` pair, indexed `[mode][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGrid {
    pub plants: Vec<Vec<AugmentedPlant>>,
}

impl AugmentedGrid {
    pub fn build(model: &MjnnModel, partition: &NodePartition) -> Result<Self, AugmentError> {
        let plants = (0..model.n_modes())
            .map(|i| (0..partition.nodes()).map(|m| build_augmented(model, partition, i, m)).collect())
            .collect::<Result<_, _>>()?;
        Ok(Self { plants })
    }

    pub fn get(&self, mode: usize, node: usize) -> &AugmentedPlant {
        &self.plants[mode][node]
    }
}

/// `1₂ ⊗ f(x)` where `x` is the plant slice of `x̄`.
pub fn augmented_activation(model: &MjnnModel, x_bar: &DVector<f64>) -> DVector<f64> {
    let n = model.nx();
    let f = model.activation.apply(&x_bar.rows(0, n).into_owned());
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&f);
    out.rows_mut(n, n).copy_from(&f);
    out
}

/// Estimator gains indexed `[mode][node]`, each `(n+p)×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorGains {
    pub k: Vec<Vec<DMatrix<f64>>>,
}

impl EstimatorGains {
    pub fn zeros(modes: usize, nodes: usize, n_aug: usize, ny: usize) -> Self {
        Self { k: vec![vec![DMatrix::zeros(n_aug, ny); nodes]; modes] }
    }

    pub fn get(&self, mode: usize, node: usize) -> &DMatrix<f64> {
        &self.k[mode][node]
    }

    pub fn check(&self, modes: usize, nodes: usize, n_aug: usize, ny: usize) -> Result<(), AugmentError> {
        if self.k.len() != modes {
            return Err(AugmentError::GridMismatch(format!("{} modes, expected {modes}", self.k.len())));
        }
        for (i, row) in self.k.iter().enumerate() {
            if row.len() != nodes {
                return Err(AugmentError::GridMismatch(format!(
                    "mode {i} has {} nodes, expected {nodes}",
                    row.len()
                )));
            }
            for (m, k) in row.iter().enumerate() {
                if k.shape() != (n_aug, ny) {
                    return Err(AugmentError::GridMismatch(format!(
                        "K[{i}][{m}] is {:?}, expected {:?}",
                        k.shape(),
                        (n_aug, ny)
                    )));
                }
                if !k.iter().all(|v| v.is_finite()) {
                    return Err(AugmentError::GridMismatch(format!("K[{i}][{m}] is not finite")));
                }
            }
        }
        Ok(())
    }
}

/// Stacked matrices acting on `η`, the nonlinearity stack
/// `f̃ = [f̄(x̄); f̄(x̄) − f̄(x̂)]` and `W = [ω̄; ω̄]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMatrices {
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
    pub d_tilde: DMatrix<f64>,
    pub m_tilde: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    pub blocks: Vec<Vec<ClosedLoopMatrices>>,
    pub n_eta: usize,
}

impl ClosedLoopSystem {
    pub fn get(&self, mode: usize, node: usize) -> &ClosedLoopMatrices {
        &self.blocks[mode][node]
    }
}

pub fn build_closed_loop(grid: &AugmentedGrid, gains: &EstimatorGains) -> Result<ClosedLoopSystem, AugmentError> {
    let modes = grid.plants.len();
    let nodes = grid.plants.first().map_or(0, |r| r.len());
    let first = &grid.plants[0][0];
    let n_aug = first.a_bar.nrows();
    let ny = first.e_bar.nrows();
    gains.check(modes, nodes, n_aug, ny)?;
    let blocks = (0..modes)
        .map(|i| {
            (0..nodes)
                .map(|m| {
                    let g = grid.get(i, m);
                    let k = gains.get(i, m);
                    let a_err = &g.a_bar - k * &g.e_bar;
                    let d_err = &g.d1_bar - k * &g.d2_bar;
                    ClosedLoopMatrices {
                        a_tilde: block_diag(&[&g.a_bar, &a_err]),
                        b_tilde: block_diag(&[&g.b_bar, &g.b_bar]),
                        c_tilde: block_diag(&[&g.c_bar, &g.c_bar]),
                        d_tilde: block_diag(&[&g.d1_bar, &d_err]),
                        m_tilde: hstack(&[&DMatrix::zeros(g.m_bar.nrows(), n_aug), &g.m_bar]),
                    }
                })
                .collect()
        })
        .collect();
    Ok(ClosedLoopSystem { blocks, n_eta: 2 * n_aug })
}

/// `f̃ = [f̄(x̄); f̄(x̄) − f̄(x̂)]` with `x̂ = x̄ − e`.
pub fn stacked_activation(model: &MjnnModel, eta: &DVector<f64>) -> DVector<f64> {
    let a = eta.len() / 2;
    let x_bar = eta.rows(0, a).into_owned();
    let x_hat = &x_bar - eta.rows(a, a);
    let fb = augmented_activation(model, &x_bar);
    let fh = augmented_activation(model, &x_hat);
    let diff = &fb - fh;
    let mut out = DVector::zeros(2 * fb.len());
    out.rows_mut(0, fb.len()).copy_from(&fb);
    out.rows_mut(fb.len(), fb.len()).copy_from(&diff);
    out
}
