//! Plant description: per-mode matrices, the partially known Markov chain,
//! activation sector bounds and delay bounds.
//!
//! Mode and node indices are zero-based throughout the library. File formats
//! and CSV output use one-based labels.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::is_finite;

pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransitionEntry {
    Known(f64),
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSpec {
    pub entries: Vec<Vec<TransitionEntry>>,
}

impl TransitionSpec {
    pub fn fully_known(pi: &DMatrix<f64>) -> Self {
        let entries = (0..pi.nrows())
            .map(|i| (0..pi.ncols()).map(|j| TransitionEntry::Known(pi[(i, j)])).collect())
            .collect();
        Self { entries }
    }

    pub fn modes(&self) -> usize {
        self.entries.len()
    }

    pub fn is_fully_known(&self) -> bool {
        self.entries
            .iter()
            .all(|row| row.iter().all(|c| matches!(c, TransitionEntry::Known(_))))
    }

    pub fn known(&self, i: usize, j: usize) -> Option<f64> {
        match self.entries[i][j] {
            TransitionEntry::Known(p) => Some(p),
            TransitionEntry::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnownIndexSets {
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub known_mass: f64,
}

pub fn known_index_sets(spec: &TransitionSpec, i: usize) -> KnownIndexSets {
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    let mut known_mass = 0.0;
    for (j, cell) in spec.entries[i].iter().enumerate() {
        match cell {
            TransitionEntry::Known(p) => {
                known.push(j);
                known_mass += p;
            }
            TransitionEntry::Unknown => unknown.push(j),
        }
    }
    KnownIndexSets { known, unknown, known_mass }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorBounds {
    pub f1: DMatrix<f64>,
    pub f2: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelaySpec {
    pub min: usize,
    pub max: usize,
}

/// Componentwise activation map `f_l(x_l)`.
#[derive(Clone)]
pub enum Activation {
    Tanh { scales: Vec<f64> },
    Custom(Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh { scales } => f.debug_struct("Tanh").field("scales", scales).finish(),
            Activation::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Activation {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Activation::Tanh { scales } => {
                DVector::from_fn(x.len(), |l, _| (scales[l] * x[l]).tanh())
            }
            Activation::Custom(f) => DVector::from_fn(x.len(), |l, _| f(l, x[l])),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MjnnModel {
    pub modes: Vec<ModeMatrices>,
    pub transitions: TransitionSpec,
    pub sector: SectorBounds,
    pub delay: DelaySpec,
    pub activation: Activation,
}

impl MjnnModel {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }
    /// Plant state dimension.
    pub fn nx(&self) -> usize {
        self.modes[0].a.nrows()
    }
    /// Measured output dimension.
    pub fn ny(&self) -> usize {
        self.modes[0].e.nrows()
    }
    /// Estimated output dimension.
    pub fn nz(&self) -> usize {
        self.modes[0].m.nrows()
    }
    /// Disturbance dimension.
    pub fn nw(&self) -> usize {
        self.modes[0].d1.ncols()
    }
    /// Dimension of the augmented state `[x; ȳ(k-1)]`.
    pub fn n_aug(&self) -> usize {
        self.nx() + self.ny()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model has no modes")]
    Empty,
    #[error("mode {mode}: matrix {matrix} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        mode: usize,
        matrix: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("mode {mode}: matrix {matrix} has non-finite entries")]
    NonFinite { mode: usize, matrix: &'static str },
    #[error("transition row {row}: {reason}")]
    RowSumViolation { row: usize, reason: String },
    #[error("delay bounds min={min} max={max} must satisfy 0 < min <= max")]
    DelayOrderViolation { min: usize, max: usize },
    #[error("sector matrix {matrix} is {found:?}, expected {expected:?}")]
    SectorShape {
        matrix: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("activation has {found} scales, expected {expected}")]
    ActivationShape { expected: usize, found: usize },
}

/// Returns the model iff every structural invariant holds, otherwise the full
/// list of violations. Sector compliance of the activation is not checked here;
/// see [`sector_compliance`].
pub fn validate_model(model: MjnnModel) -> Result<MjnnModel, Vec<ModelError>> {
    let mut errs = Vec::new();
    if model.modes.is_empty() {
        return Err(vec![ModelError::Empty]);
    }
    let n = model.nx();
    let p = model.ny();
    let q = model.nz();
    let r = model.nw();
    for (i, md) in model.modes.iter().enumerate() {
        let checks: [(&'static str, &DMatrix<f64>, (usize, usize)); 7] = [
            ("A", &md.a, (n, n)),
            ("B", &md.b, (n, n)),
            ("C", &md.c, (n, n)),
            ("D1", &md.d1, (n, r)),
            ("D2", &md.d2, (p, r)),
            ("E", &md.e, (p, n)),
            ("M", &md.m, (q, n)),
        ];
        for (name, mat, expected) in checks {
            if mat.shape() != expected {
                errs.push(ModelError::DimensionMismatch {
                    mode: i,
                    matrix: name,
                    expected,
                    found: mat.shape(),
                });
            } else if !is_finite(mat) {
                errs.push(ModelError::NonFinite { mode: i, matrix: name });
            }
        }
    }
    let nm = model.n_modes();
    let t = &model.transitions;
    if t.entries.len() != nm {
        errs.push(ModelError::RowSumViolation {
            row: 0,
            reason: format!("transition grid has {} rows for {} modes", t.entries.len(), nm),
        });
    }
    for (i, row) in t.entries.iter().enumerate() {
        if row.len() != nm {
            errs.push(ModelError::RowSumViolation {
                row: i,
                reason: format!("row has {} cells, expected {}", row.len(), nm),
            });
            continue;
        }
        let mut sum = 0.0;
        let mut unknown = false;
        for cell in row {
            match *cell {
                TransitionEntry::Known(pv) => {
                    if !(0.0..=1.0).contains(&pv) || !pv.is_finite() {
                        errs.push(ModelError::RowSumViolation {
                            row: i,
                            reason: format!("probability {pv} outside [0,1]"),
                        });
                    }
                    sum += pv;
                }
                TransitionEntry::Unknown => unknown = true,
            }
        }
        if unknown && sum > 1.0 + PROB_TOL {
            errs.push(ModelError::RowSumViolation {
                row: i,
                reason: format!("known mass {sum} exceeds 1"),
            });
        }
        if !unknown && (sum - 1.0).abs() > PROB_TOL {
            errs.push(ModelError::RowSumViolation {
                row: i,
                reason: format!("fully known row sums to {sum}"),
            });
        }
    }
    let d = model.delay;
    if d.min == 0 || d.min > d.max {
        errs.push(ModelError::DelayOrderViolation { min: d.min, max: d.max });
    }
    for (name, f) in [("F1", &model.sector.f1), ("F2", &model.sector.f2)] {
        if f.shape() != (n, n) {
            errs.push(ModelError::SectorShape { matrix: name, expected: (n, n), found: f.shape() });
        }
    }
    if let Activation::Tanh { scales } = &model.activation {
        if scales.len() != n {
            errs.push(ModelError::ActivationShape { expected: n, found: scales.len() });
        }
    }
    if errs.is_empty() {
        Ok(model)
    } else {
        Err(errs)
    }
}

/// Ground-truth row-stochastic chain used by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCompletion {
    pi: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompletionError {
    #[error("completion is {found:?}, expected {expected:?}")]
    Shape { expected: (usize, usize), found: (usize, usize) },
    #[error("row {row} sums to {sum}")]
    RowSum { row: usize, sum: f64 },
    #[error("entry ({row},{col}) = {value} is negative")]
    Negative { row: usize, col: usize, value: f64 },
    #[error("entry ({row},{col}) = {value} disagrees with known probability {known}")]
    KnownMismatch { row: usize, col: usize, value: f64, known: f64 },
    #[error("row {row} has unknown entries; an explicit completion is required")]
    Incomplete { row: usize },
}

impl TransitionCompletion {
    pub fn new(pi: DMatrix<f64>, spec: &TransitionSpec) -> Result<Self, CompletionError> {
        let nm = spec.modes();
        if pi.shape() != (nm, nm) {
            return Err(CompletionError::Shape { expected: (nm, nm), found: pi.shape() });
        }
        for i in 0..nm {
            let mut sum = 0.0;
            for j in 0..nm {
                let v = pi[(i, j)];
                if v < 0.0 {
                    return Err(CompletionError::Negative { row: i, col: j, value: v });
                }
                if let Some(k) = spec.known(i, j) {
                    if v != k {
                        return Err(CompletionError::KnownMismatch { row: i, col: j, value: v, known: k });
                    }
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(CompletionError::RowSum { row: i, sum });
            }
        }
        Ok(Self { pi })
    }

    /// The completion of a table with no unknown cells.
    pub fn from_known(spec: &TransitionSpec) -> Result<Self, CompletionError> {
        let nm = spec.modes();
        let mut pi = DMatrix::zeros(nm, nm);
        for i in 0..nm {
            for j in 0..nm {
                pi[(i, j)] = spec.known(i, j).ok_or(CompletionError::Incomplete { row: i })?;
            }
        }
        Self::new(pi, spec)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pi
    }
}

/// Inverse-CDF draw of the next mode from row `i`.
pub fn sample_next_mode(completion: &TransitionCompletion, i: usize, u: f64) -> usize {
    let pi = completion.matrix();
    let mut cum = 0.0;
    let mut last_positive = i;
    for j in 0..pi.ncols() {
        let p = pi[(i, j)];
        if p > 0.0 {
            last_positive = j;
        }
        cum += p;
        if u < cum {
            return j;
        }
    }
    last_positive
}

/// Uniform integer delay on `[min, max]`.
pub fn sample_delay(spec: &DelaySpec, u: f64) -> usize {
    let width = spec.max - spec.min + 1;
    let k = ((u * width as f64).floor() as usize).min(width - 1);
    spec.min + k
}

pub fn activation_apply(model: &MjnnModel, x: &DVector<f64>) -> DVector<f64> {
    model.activation.apply(x)
}

/// `[fx − F1·x]ᵀ[fx − F2·x]`; non-positive when the sector condition holds.
pub fn sector_residual(sector: &SectorBounds, x: &DVector<f64>, fx: &DVector<f64>) -> f64 {
    let a = fx - &sector.f1 * x;
    let b = fx - &sector.f2 * x;
    a.dot(&b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorReport {
    pub samples: usize,
    pub worst_residual: f64,
    pub worst_point: DVector<f64>,
}

impl SectorReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.worst_residual <= tol
    }
}

/// Samples the sector residual of the model's activation on a uniform grid of
/// `per_axis^n` points over `[-half_width, half_width]^n`, both for `f(x)` and
/// for the increment `f(x) − f(x')` against `x − x'` with `x'` the mirrored
/// grid point.
pub fn sector_compliance(model: &MjnnModel, half_width: f64, per_axis: usize) -> SectorReport {
    let n = model.nx();
    let total = per_axis.pow(n as u32);
    let step = if per_axis > 1 { 2.0 * half_width / (per_axis - 1) as f64 } else { 0.0 };
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = DVector::zeros(n);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let x = DVector::from_fn(n, |l, _| -half_width + step * idx[l] as f64);
        let fx = model.activation.apply(&x);
        let res = sector_residual(&model.sector, &x, &fx);
        if res > worst {
            worst = res;
            worst_point = x.clone();
        }
        let xr = DVector::from_fn(n, |l, _| x[(l + 1) % n] * 0.5);
        let dx = &x - &xr;
        let df = &fx - model.activation.apply(&xr);
        let inc = sector_residual(&model.sector, &dx, &df);
        if inc > worst {
            worst = inc;
            worst_point = x.clone();
        }
        for d in idx.iter_mut() {
            *d += 1;
            if *d < per_axis {
                break;
            }
            *d = 0;
        }
    }
    SectorReport { samples: total, worst_residual: worst, worst_point }
}

/// Sector `F1 = 0`, `F2 = diag(c)` satisfied by `tanh(c_l x_l)`.
pub fn tanh_sector(scales: &[f64]) -> SectorBounds {
    let n = scales.len();
    SectorBounds {
        f1: DMatrix::zeros(n, n),
        f2: DMatrix::from_diagonal(&DVector::from_column_slice(scales)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::benchmark_model;
    use TransitionEntry::{Known as K, Unknown as U};

    fn partial_mask() -> TransitionSpec {
        TransitionSpec {
            entries: vec![
                vec![K(0.3), U, K(0.1), U],
                vec![U, U, U, K(0.2)],
                vec![K(0.1), U, K(0.5), U],
                vec![U, U, K(0.1), K(0.5)],
            ],
        }
    }

    #[test]
    fn benchmark_fixture_is_valid() {
        assert!(validate_model(benchmark_model()).is_ok());
    }

    #[test]
    fn short_row_is_a_row_sum_violation() {
        let mut m = benchmark_model();
        m.transitions.entries[0] = vec![K(0.3), K(0.2), K(0.1), K(0.3)];
        let errs = validate_model(m).unwrap_err();
        assert!(matches!(errs[0], ModelError::RowSumViolation { row: 0, .. }));
    }

    #[test]
    fn reversed_delay_is_rejected() {
        let mut m = benchmark_model();
        m.delay = DelaySpec { min: 3, max: 1 };
        let errs = validate_model(m).unwrap_err();
        assert_eq!(errs, vec![ModelError::DelayOrderViolation { min: 3, max: 1 }]);
    }

    #[test]
    fn wrong_shape_names_mode_and_matrix() {
        let mut m = benchmark_model();
        m.modes[2].c = DMatrix::zeros(3, 2);
        let errs = validate_model(m).unwrap_err();
        assert!(matches!(errs[0], ModelError::DimensionMismatch { mode: 2, matrix: "C", .. }));
    }

    #[test]
    fn partial_row_with_known_mass_below_one_is_valid() {
        let mut m = benchmark_model();
        m.transitions = partial_mask();
        assert!(validate_model(m).is_ok());
    }

    #[test]
    fn index_sets_of_masked_row() {
        let s = known_index_sets(&partial_mask(), 0);
        assert_eq!(s.known, vec![0, 2]);
        assert_eq!(s.unknown, vec![1, 3]);
        assert!((s.known_mass - 0.4).abs() < 1e-15);
    }

    #[test]
    fn index_sets_of_full_and_empty_rows() {
        let full = known_index_sets(&benchmark_model().transitions, 0);
        assert!(full.unknown.is_empty());
        assert!((full.known_mass - 1.0).abs() < PROB_TOL);
        let spec = TransitionSpec { entries: vec![vec![U, U], vec![U, U]] };
        let empty = known_index_sets(&spec, 1);
        assert!(empty.known.is_empty());
        assert_eq!(empty.known_mass, 0.0);
    }

    #[test]
    fn inverse_cdf_examples() {
        let m = benchmark_model();
        let c = TransitionCompletion::from_known(&m.transitions).unwrap();
        assert_eq!(sample_next_mode(&c, 0, 0.0), 0);
        assert_eq!(sample_next_mode(&c, 0, 0.55), 2);
        assert_eq!(sample_next_mode(&c, 0, 0.999_999), 3);
    }

    #[test]
    fn absorbing_row_always_returns_itself() {
        let pi = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        let spec = TransitionSpec::fully_known(&pi);
        let c = TransitionCompletion::new(pi, &spec).unwrap();
        for u in [0.0, 0.3, 0.999_999_999, 1.0] {
            assert_eq!(sample_next_mode(&c, 1, u), 1);
        }
    }

    #[test]
    fn completion_must_agree_with_known_cells() {
        let spec = TransitionSpec { entries: vec![vec![K(0.5), U], vec![U, U]] };
        let bad = DMatrix::from_row_slice(2, 2, &[0.4, 0.6, 0.5, 0.5]);
        assert!(matches!(
            TransitionCompletion::new(bad, &spec),
            Err(CompletionError::KnownMismatch { .. })
        ));
        let good = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.1, 0.9]);
        assert!(TransitionCompletion::new(good, &spec).is_ok());
        assert!(matches!(
            TransitionCompletion::from_known(&spec),
            Err(CompletionError::Incomplete { row: 0 })
        ));
    }

    #[test]
    fn delay_sampling() {
        let d = DelaySpec { min: 2, max: 2 };
        assert_eq!(sample_delay(&d, 0.0), 2);
        assert_eq!(sample_delay(&d, 0.99), 2);
        let d = DelaySpec { min: 1, max: 3 };
        assert_eq!(sample_delay(&d, 0.99), 3);
        assert_eq!(sample_delay(&d, 0.0), 1);
        assert_eq!(sample_delay(&d, 0.5), 2);
    }

    #[test]
    fn tanh_activation_values() {
        let m = benchmark_model();
        let z = activation_apply(&m, &DVector::zeros(2));
        assert_eq!(z, DVector::zeros(2));
        let f = activation_apply(&m, &DVector::from_vec(vec![10.0, 10.0]));
        assert_eq!(f[0], 0.3f64.tanh());
        assert_eq!(f[1], 0.2f64.tanh());
    }

    #[test]
    fn zero_activation_satisfies_zero_sector() {
        let mut m = benchmark_model();
        m.activation = Activation::Custom(Arc::new(|_, _| 0.0));
        m.sector = SectorBounds { f1: DMatrix::zeros(2, 2), f2: DMatrix::zeros(2, 2) };
        assert!(sector_compliance(&m, 10.0, 32).holds(1e-12));
    }

    #[test]
    fn residual_examples() {
        let s = SectorBounds {
            f1: DMatrix::identity(2, 2) * 0.1,
            f2: DMatrix::identity(2, 2) * 0.2,
        };
        assert_eq!(sector_residual(&s, &DVector::zeros(2), &DVector::zeros(2)), 0.0);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let fx = &s.f2 * &x * 2.0;
        let r = sector_residual(&s, &x, &fx);
        assert!((r - 0.06).abs() < 1e-15);
        assert!(r > 0.0);
    }

    #[test]
    fn printed_sector_bounds_do_not_contain_the_printed_activation() {
        // (0.03 − 0.2)(0.03 − 0.1) > 0 at x = (1, 0).
        let m = benchmark_model();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let r = sector_residual(&m.sector, &x, &activation_apply(&m, &x));
        assert!(r > 0.01);
        assert!(!sector_compliance(&m, 10.0, 32).holds(1e-12));
    }

    #[test]
    fn tanh_sector_holds_on_grid() {
        let mut m = benchmark_model();
        m.sector = tanh_sector(&[0.03, 0.02]);
        let rep = sector_compliance(&m, 10.0, 32);
        assert!(rep.samples >= 1000);
        assert!(rep.holds(1e-12), "worst {}", rep.worst_residual);
    }

    #[test]
    fn frequencies_match_row_one() {
        use rand::{Rng, SeedableRng};
        let m = benchmark_model();
        let c = TransitionCompletion::from_known(&m.transitions).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_next_mode(&c, 0, rng.gen::<f64>())] += 1;
        }
        for (j, p) in [0.3, 0.2, 0.1, 0.4].iter().enumerate() {
            assert!((counts[j] as f64 / draws as f64 - p).abs() < 0.02);
        }
    }
}
