//! Reference models used by tests, examples and the CLI.

use nalgebra::DMatrix;

use crate::augment::EstimatorGains;
use crate::model::{
    Activation, DelaySpec, MjnnModel, ModeMatrices, SectorBounds, TransitionSpec,
};
use crate::protocol::NodePartition;

fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a, b, c, d])
}

fn diag2(a: f64, b: f64) -> DMatrix<f64> {
    m2(a, 0.0, 0.0, b)
}

/// Two-neuron, four-mode network with delays in `1..=3`.
pub fn benchmark_model() -> MjnnModel {
    let a = [
        m2(0.27, 0.0, 0.0, 0.63),
        m2(0.32, 0.0, 0.16, 0.47),
        m2(0.30, 0.13, 0.16, 0.14),
        m2(0.50, 0.0, 0.21, 0.29),
    ];
    let b = [
        m2(-0.5, 0.8, 0.3, -0.33),
        m2(0.2, -0.7, -0.55, 0.62),
        m2(-0.8, 0.7, 0.5, 0.38),
        m2(0.4, -0.6, -0.4, 0.6),
    ];
    let c = [
        m2(-0.02, 0.12, 0.07, -0.14),
        m2(0.02, 0.12, 0.07, 0.02),
        m2(-0.02, 0.12, 0.07, 0.02),
        m2(0.02, 0.12, 0.07, -0.14),
    ];
    let d1 = [
        diag2(-0.04, -0.04),
        diag2(-0.03, -0.04),
        diag2(-0.02, -0.03),
        diag2(-0.05, -0.04),
    ];
    let d2 = [
        m2(-0.11, 0.15, 0.12, 0.16),
        m2(-0.20, 0.18, 0.10, 0.06),
        m2(-0.21, 0.05, 0.11, 0.15),
        m2(-0.12, 0.14, 0.20, 0.12),
    ];
    let e = [
        m2(0.10, 0.20, 0.15, -0.20),
        m2(-0.25, 0.15, 0.15, 0.20),
        m2(-0.20, 0.15, 0.15, -0.10),
        m2(-0.20, 0.15, 0.10, 0.20),
    ];
    let m = [
        m2(0.15, 0.20, 0.30, 0.40),
        m2(0.25, 0.12, 0.20, 0.14),
        m2(0.15, -0.20, -0.23, 0.22),
        m2(0.15, 0.15, 0.40, 0.20),
    ];
    let modes = (0..4)
        .map(|i| ModeMatrices {
            a: a[i].clone(),
            b: b[i].clone(),
            c: c[i].clone(),
            d1: d1[i].clone(),
            d2: d2[i].clone(),
            e: e[i].clone(),
            m: m[i].clone(),
        })
        .collect();
    let pi = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.3, 0.2, 0.1, 0.4, //
            0.3, 0.2, 0.3, 0.2, //
            0.1, 0.1, 0.5, 0.3, //
            0.2, 0.2, 0.1, 0.5,
        ],
    );
    MjnnModel {
        modes,
        transitions: TransitionSpec::fully_known(&pi),
        sector: SectorBounds { f1: diag2(0.2, 0.1), f2: diag2(0.1, 0.2) },
        delay: DelaySpec { min: 1, max: 3 },
        activation: Activation::Tanh { scales: vec![0.03, 0.02] },
    }
}

pub fn benchmark_partition() -> NodePartition {
    NodePartition::new(vec![1, 1]).expect("valid partition")
}

fn k4(scale: f64, rows: [[f64; 2]; 4]) -> DMatrix<f64> {
    DMatrix::from_fn(4, 2, |i, j| rows[i][j] * scale)
}

/// The published 4×2 gain grid, indexed `[mode][node]`.
pub fn published_gains() -> EstimatorGains {
    let k = vec![
        vec![
            k4(1e-4, [[0.0, 0.3587], [0.0, 0.1064], [0.0, 0.0002], [0.0001, 0.0]]),
            k4(1e-4, [[-0.0036, 0.0], [0.1864, 0.1317], [0.0, 0.0], [0.1321, 0.0]]),
        ],
        vec![
            k4(1e-5, [[0.0, 0.9012], [0.0, -0.5550], [0.0, -0.0034], [-0.0046, 0.0]]),
            k4(1e-3, [[0.2765, 0.0], [0.1415, -0.1157], [0.0, 0.0], [-0.0002, 0.0]]),
        ],
        vec![
            k4(1e-5, [[0.0, -0.6184], [0.0, 0.2952], [0.0, 0.0067], [-0.0006, 0.0]]),
            k4(1e-4, [[0.3930, 0.0], [0.0150, -0.0003], [0.0, 0.0], [-0.0005, 0.0]]),
        ],
        vec![
            k4(1e-4, [[0.0, -0.6830], [0.0, 0.6758], [0.0, 0.0046], [0.0049, 0.0]]),
            k4(1e-4, [[0.0735, 0.0], [-0.1131, -0.0398], [0.0, 0.0], [-0.0402, 0.0]]),
        ],
    ];
    EstimatorGains { k }
}

/// One-mode scalar plant `x⁺ = a x + ω`, `z = x`, with no measurement,
/// no activation and a unit delay.
pub fn scalar_toy(a: f64) -> MjnnModel {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    MjnnModel {
        modes: vec![ModeMatrices {
            a: one(a),
            b: one(0.0),
            c: one(0.0),
            d1: one(1.0),
            d2: one(0.0),
            e: one(0.0),
            m: one(1.0),
        }],
        transitions: TransitionSpec::fully_known(&one(1.0)),
        sector: SectorBounds { f1: one(0.0), f2: one(0.0) },
        delay: DelaySpec { min: 1, max: 1 },
        activation: Activation::Tanh { scales: vec![0.0] },
    }
}
