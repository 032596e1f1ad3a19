//! Monte-Carlo simulation of the plant, the scheduler and the estimator.

use std::io::{self, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::{augmented_activation, AugmentError, AugmentedGrid, EstimatorGains};
use crate::lmi::Certificate;
use crate::model::{sample_delay, sample_next_mode, MjnnModel, TransitionCompletion};
use crate::protocol::{select_node, update_transmitted, SchedulerState, WtodConfig};

const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSignal {
    Zero,
    /// `w = e^{−0.05k} sin k`, `v = 2e^{−0.05k} cos 2k` on every component;
    /// `literal_exponent` switches the envelope to `e^{−0.05^k}`.
    DecayingSinusoid { literal_exponent: bool },
    /// `ω̄(k) = [w(k); v(k)]` per step.
    TimeSeries(Vec<DVector<f64>>),
}

impl DisturbanceSignal {
    /// `ω̄(k)` of length `2r`.
    pub fn at(&self, k: usize, r: usize) -> DVector<f64> {
        match self {
            DisturbanceSignal::Zero => DVector::zeros(2 * r),
            DisturbanceSignal::DecayingSinusoid { literal_exponent } => {
                let kf = k as f64;
                let env = if *literal_exponent { (-(0.05f64.powf(kf))).exp() } else { (-0.05 * kf).exp() };
                let w = env * kf.sin();
                let v = 2.0 * env * (2.0 * kf).cos();
                DVector::from_fn(2 * r, |i, _| if i < r { w } else { v })
            }
            DisturbanceSignal::TimeSeries(values) => values[k].clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DisturbanceSignal::Zero)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state exceeded {OVERFLOW_LIMIT:e} at step {step}")]
    NumericOverflow { step: usize },
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("disturbance series has {found} samples, horizon needs {needed}")]
    ShortDisturbance { needed: usize, found: usize },
    #[error("initial history must hold {expected} states of size {n}")]
    BadHistory { expected: usize, n: usize },
    #[error("certificate does not match the trajectory: {0}")]
    CertificateMismatch(String),
    #[error("initial mode {0} out of range")]
    BadInitialMode(usize),
    #[error("ensemble needs at least one run")]
    NoRuns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of transmissions; states are recorded for `k = 0..=horizon`.
    pub horizon: usize,
    pub seed: u64,
    pub stream: u64,
    pub initial_mode: usize,
}

impl SimConfig {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self { horizon, seed, stream: 0, initial_mode: 0 }
    }
}

/// One scheduled step `k < horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub mode: usize,
    pub delay: usize,
    pub node: usize,
    pub w_sq: f64,
}

/// Plant states `x(d)` for `d = −τ_max..=0`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialHistory(pub Vec<DVector<f64>>);

impl InitialHistory {
    pub fn zero(model: &MjnnModel) -> Self {
        Self(vec![DVector::zeros(model.nx()); model.delay.max + 1])
    }

    pub fn random(model: &MjnnModel, scale: f64, rng: &mut impl Rng) -> Self {
        Self(
            (0..=model.delay.max)
                .map(|_| DVector::from_fn(model.nx(), |_, _| rng.gen_range(-scale..=scale)))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    /// `x(k)` for `k = 0..=horizon`.
    pub x: Vec<DVector<f64>>,
    /// `x̂(k)` for `k = 0..=horizon`.
    pub x_hat: Vec<DVector<f64>>,
    /// `e(k) = x̄(k) − x̂(k)`.
    pub e: Vec<DVector<f64>>,
    /// `η(k) = [x̄(k); e(k)]`.
    pub eta: Vec<DVector<f64>>,
    pub z_sq: Vec<f64>,
    /// `η(d)` for `d = −τ_max..=−1`, oldest first.
    pub eta_history: Vec<DVector<f64>>,
    pub sup_z_sq: f64,
    pub sum_w_sq: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `η(d)` for `d ≥ −τ_max`.
    pub fn eta_at(&self, d: isize) -> &DVector<f64> {
        if d >= 0 {
            &self.eta[d as usize]
        } else {
            let h = self.eta_history.len() as isize;
            &self.eta_history[(h + d) as usize]
        }
    }

    pub fn node_counts(&self, nodes: usize) -> Vec<usize> {
        let mut c = vec![0; nodes];
        for s in &self.steps {
            c[s.node] += 1;
        }
        c
    }
}

fn check_overflow(v: &DVector<f64>, step: usize) -> Result<(), SimError> {
    if v.iter().any(|x| !x.is_finite() || x.abs() > OVERFLOW_LIMIT) {
        Err(SimError::NumericOverflow { step })
    } else {
        Ok(())
    }
}

/// Steps the plant, scheduler and estimator from `history`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    completion: &TransitionCompletion,
    disturbance: &DisturbanceSignal,
    history: &InitialHistory,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    let (n, p, r) = (model.nx(), model.ny(), model.nw());
    let a = n + p;
    let tmax = model.delay.max;
    if history.0.len() != tmax + 1 || history.0.iter().any(|x| x.len() != n) {
        return Err(SimError::BadHistory { expected: tmax + 1, n });
    }
    if cfg.initial_mode >= model.n_modes() {
        return Err(SimError::BadInitialMode(cfg.initial_mode));
    }
    if let DisturbanceSignal::TimeSeries(v) = disturbance {
        if v.len() < cfg.horizon {
            return Err(SimError::ShortDisturbance { needed: cfg.horizon, found: v.len() });
        }
    }
    let grid = AugmentedGrid::build(model, &wtod.partition)?;
    gains.check(model.n_modes(), wtod.nodes(), a, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);

    // Plant and estimator states indexed from d = −τ_max.
    let mut xs: Vec<DVector<f64>> = history.0.clone();
    let mut xhs: Vec<DVector<f64>> = vec![DVector::zeros(a); tmax + 1];
    let eta_history: Vec<DVector<f64>> = history.0[..tmax]
        .iter()
        .map(|x| {
            let mut eta = DVector::zeros(2 * a);
            eta.rows_mut(0, n).copy_from(x);
            eta.rows_mut(a, n).copy_from(x);
            eta
        })
        .collect();
    let mut sched = SchedulerState::zero(p);
    let mut mode = cfg.initial_mode;
    let mut traj = Trajectory {
        steps: Vec::with_capacity(cfg.horizon),
        x: Vec::with_capacity(cfg.horizon + 1),
        x_hat: Vec::with_capacity(cfg.horizon + 1),
        e: Vec::with_capacity(cfg.horizon + 1),
        eta: Vec::with_capacity(cfg.horizon + 1),
        z_sq: Vec::with_capacity(cfg.horizon + 1),
        eta_history,
        sup_z_sq: 0.0,
        sum_w_sq: 0.0,
    };
    let record = |traj: &mut Trajectory, x: &DVector<f64>, y_prev: &DVector<f64>, xh: &DVector<f64>, mode: usize, node: usize| {
        let mut x_bar = DVector::zeros(a);
        x_bar.rows_mut(0, n).copy_from(x);
        x_bar.rows_mut(n, p).copy_from(y_prev);
        let e = &x_bar - xh;
        let z = &grid.get(mode, node).m_bar * &e;
        let z_sq = z.norm_squared();
        let mut eta = DVector::zeros(2 * a);
        eta.rows_mut(0, a).copy_from(&x_bar);
        eta.rows_mut(a, a).copy_from(&e);
        traj.sup_z_sq = traj.sup_z_sq.max(z_sq);
        traj.x.push(x.clone());
        traj.x_hat.push(xh.clone());
        traj.e.push(e);
        traj.eta.push(eta);
        traj.z_sq.push(z_sq);
    };
    for k in 0..=cfg.horizon {
        if k > 0 {
            mode = sample_next_mode(completion, mode, rng.gen::<f64>());
        }
        let delay = sample_delay(&model.delay, rng.gen::<f64>());
        let cur = tmax + k;
        let x = xs[cur].clone();
        let xh = xhs[cur].clone();
        if k == cfg.horizon {
            // z̃ uses M̄, which does not depend on the node.
            record(&mut traj, &x, &sched.y_bar, &xh, mode, 0);
            break;
        }
        let omega = disturbance.at(k, r);
        let md = &model.modes[mode];
        let y = &md.e * &x + &md.d2 * omega.rows(r, r);
        let node = select_node(&sched, &y, &wtod.weights, &wtod.partition);
        let y_prev = sched.y_bar.clone();
        let next = update_transmitted(&sched, &y, node, &wtod.partition);
        debug_assert!((0..p).all(|c| wtod.partition.range(node).contains(&c) || next.y_bar[c] == y_prev[c]));
        record(&mut traj, &x, &y_prev, &xh, mode, node);
        let w_sq = 2.0 * omega.norm_squared();
        traj.sum_w_sq += w_sq;
        traj.steps.push(StepRecord { k, mode, delay, node, w_sq });

        let x_del = &xs[cur - delay];
        let f = model.activation.apply(&x);
        let f_del = model.activation.apply(x_del);
        let x_next = &md.a * &x + &md.b * f + &md.c * f_del + &md.d1 * omega.rows(0, r);
        let g = grid.get(mode, node);
        let xh_del = &xhs[cur - delay];
        let k_gain = gains.get(mode, node);
        let xh_next = &g.a_bar * &xh
            + &g.b_bar * augmented_activation(model, &xh)
            + &g.c_bar * augmented_activation(model, xh_del)
            + k_gain * (&next.y_bar - &g.e_bar * &xh);
        check_overflow(&x_next, k + 1)?;
        check_overflow(&xh_next, k + 1)?;
        xs.push(x_next);
        xhs.push(xh_next);
        sched = next;
    }
    Ok(traj)
}

/// Ratio of the peak mean squared output to the disturbance energy.
#[derive(Debug, Clone, PartialEq)]
pub enum RatioEstimate {
    /// Zero disturbance energy.
    NotApplicable,
    Value {
        /// `sup_k mean‖z̃(k)‖² / Σ‖W(k)‖²` with `‖W‖² = 2‖ω̄‖²`.
        ratio: f64,
        /// Same with `Σ‖ω̄(k)‖²` in the denominator.
        single_count_ratio: f64,
        /// Standard error of `ratio` at the peak step.
        std_err: f64,
        peak_step: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMetrics {
    pub runs: usize,
    /// Mean `‖η(k)‖²` for `k = 0..=horizon`.
    pub ms_state_norm: Vec<f64>,
    /// Mean `‖z̃(k)‖²` for `k = 0..=horizon`.
    pub ms_z: Vec<f64>,
    pub sum_w_sq: f64,
    pub ratio: RatioEstimate,
    /// Transmissions per node summed over runs.
    pub node_counts: Vec<usize>,
}

fn run_config(cfg: &SimConfig, run: usize) -> SimConfig {
    SimConfig { stream: run as u64, ..cfg.clone() }
}

/// Runs `runs` independent trajectories in parallel and merges them in run order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    completion: &TransitionCompletion,
    disturbance: &DisturbanceSignal,
    runs: usize,
    cfg: &SimConfig,
    initial_scale: f64,
) -> Result<Vec<Trajectory>, SimError> {
    if runs == 0 {
        return Err(SimError::NoRuns);
    }
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let rc = run_config(cfg, run);
            let history = if initial_scale == 0.0 {
                InitialHistory::zero(model)
            } else {
                // Separate stream family so histories do not alias the path draws.
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_41ad);
                rng.set_stream(run as u64);
                InitialHistory::random(model, initial_scale, &mut rng)
            };
            simulate(model, wtod, gains, completion, disturbance, &history, &rc)
        })
        .collect()
}

pub fn ensemble_metrics(trajs: &[Trajectory], nodes: usize) -> EnsembleMetrics {
    let runs = trajs.len();
    let len = trajs[0].eta.len();
    let mean = |f: &dyn Fn(&Trajectory, usize) -> f64| -> Vec<f64> {
        (0..len).map(|k| trajs.iter().map(|t| f(t, k)).sum::<f64>() / runs as f64).collect()
    };
    let ms_state_norm = mean(&|t, k| t.eta[k].norm_squared());
    let ms_z = mean(&|t, k| t.z_sq[k]);
    let sum_w_sq = trajs[0].sum_w_sq;
    let mut node_counts = vec![0; nodes];
    for t in trajs {
        for (c, v) in node_counts.iter_mut().zip(t.node_counts(nodes)) {
            *c += v;
        }
    }
    let ratio = if sum_w_sq == 0.0 {
        RatioEstimate::NotApplicable
    } else {
        // Peak over the transmitting steps k < horizon.
        let (peak_step, peak) =
            ms_z[..len - 1].iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |b, (k, v)| if v > b.1 { (k, v) } else { b });
        let sd = if runs > 1 {
            let var = trajs.iter().map(|t| (t.z_sq[peak_step] - peak).powi(2)).sum::<f64>() / (runs - 1) as f64;
            var.sqrt() / (runs as f64).sqrt()
        } else {
            0.0
        };
        RatioEstimate::Value {
            ratio: peak / sum_w_sq,
            single_count_ratio: peak / (0.5 * sum_w_sq),
            std_err: sd / sum_w_sq,
            peak_step,
        }
    };
    EnsembleMetrics { runs, ms_state_norm, ms_z, sum_w_sq, ratio, node_counts }
}

/// Ensemble estimate of the peak-to-energy ratio from a zero initial condition.
#[allow(clippy::too_many_arguments)]
pub fn empirical_l2linf(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    completion: &TransitionCompletion,
    disturbance: &DisturbanceSignal,
    runs: usize,
    cfg: &SimConfig,
) -> Result<EnsembleMetrics, SimError> {
    let trajs = simulate_ensemble(model, wtod, gains, completion, disturbance, runs, cfg, 0.0)?;
    Ok(ensemble_metrics(&trajs, wtod.nodes()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// First step with mean `‖η‖²` below `1e-6` of its initial value.
    Reached(usize),
    NoDecay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub decay: Decay,
    pub ms_state_norm: Vec<f64>,
}

pub const DECAY_FRACTION: f64 = 1e-6;

/// Mean-square decay of `η` without disturbance from random initial histories.
#[allow(clippy::too_many_arguments)]
pub fn mean_square_decay(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    completion: &TransitionCompletion,
    runs: usize,
    cfg: &SimConfig,
    initial_scale: f64,
) -> Result<DecayReport, SimError> {
    let trajs = match simulate_ensemble(model, wtod, gains, completion, &DisturbanceSignal::Zero, runs, cfg, initial_scale) {
        Ok(t) => t,
        Err(SimError::NumericOverflow { .. }) => {
            return Ok(DecayReport { decay: Decay::NoDecay, ms_state_norm: Vec::new() });
        }
        Err(e) => return Err(e),
    };
    let ms = ensemble_metrics(&trajs, wtod.nodes()).ms_state_norm;
    let threshold = DECAY_FRACTION * ms[0];
    let decay = ms.iter().position(|&v| v <= threshold).map_or(Decay::NoDecay, Decay::Reached);
    Ok(DecayReport { decay, ms_state_norm: ms })
}

/// `V(k)` for `k = 0..horizon` with the certificate's `P_{i,m} = diag(P1, P1)`
/// and `Z = diag(Z_plant, Z_err)`.
pub fn lyapunov_values(traj: &Trajectory, cert: &Certificate, model: &MjnnModel) -> Result<Vec<f64>, SimError> {
    let dim = traj.eta.first().map_or(0, |e| e.len());
    let z = cert.z();
    if z.nrows() != dim || cert.p1.len() != model.n_modes() {
        return Err(SimError::CertificateMismatch(format!("Z is {}x{}, η has {dim} entries", z.nrows(), z.ncols())));
    }
    let (tmin, tmax) = (model.delay.min as isize, model.delay.max as isize);
    let q = |d: isize| -> f64 {
        let e = traj.eta_at(d);
        (e.transpose() * &z * e)[(0, 0)]
    };
    let mut out = Vec::with_capacity(traj.steps.len());
    for s in &traj.steps {
        if s.node >= cert.p1[s.mode].len() {
            return Err(SimError::CertificateMismatch(format!("node {} has no P", s.node)));
        }
        let k = s.k as isize;
        let eta = &traj.eta[s.k];
        let p = cert.p(s.mode, s.node);
        let mut v = (eta.transpose() * p * eta)[(0, 0)];
        for d in (k - s.delay as isize)..k {
            v += q(d);
        }
        for l in (k - tmax + 1)..=(k - tmin) {
            for d in l..k {
                v += q(d);
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// `V(k+1) − V(k)` along `traj`.
pub fn lyapunov_delta_check(traj: &Trajectory, cert: &Certificate, model: &MjnnModel) -> Result<Vec<f64>, SimError> {
    let v = lyapunov_values(traj, cert, model)?;
    Ok(v.windows(2).map(|w| w[1] - w[0]).collect())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// `k, mode, node, x1..xn, e1..en, ztilde_sq, V` with 1-based mode and node.
/// `V` is left empty when `values` is `None`.
pub fn write_trajectory_csv(
    out: &mut impl Write,
    traj: &Trajectory,
    n: usize,
    values: Option<&[f64]>,
) -> io::Result<()> {
    let mut header = vec!["k".to_string(), "mode".into(), "node".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("e{i}")));
    header.push("ztilde_sq".into());
    header.push("V".into());
    writeln!(out, "{}", header.join(","))?;
    for s in &traj.steps {
        let mut row = vec![s.k.to_string(), (s.mode + 1).to_string(), (s.node + 1).to_string()];
        row.extend(traj.x[s.k].iter().map(|&v| fmt(v)));
        row.extend(traj.e[s.k].rows(0, n).iter().map(|&v| fmt(v)));
        row.push(fmt(traj.z_sq[s.k]));
        row.push(values.and_then(|v| v.get(s.k)).map_or(String::new(), |&v| fmt(v)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// `k, ms_state_norm, ms_ztilde_sq`.
pub fn write_ensemble_csv(out: &mut impl Write, m: &EnsembleMetrics) -> io::Result<()> {
    writeln!(out, "k,ms_state_norm,ms_ztilde_sq")?;
    for (k, (a, b)) in m.ms_state_norm.iter().zip(&m.ms_z).enumerate() {
        writeln!(out, "{k},{},{}", fmt(*a), fmt(*b))?;
    }
    Ok(())
}

/// `‖e_x(k)‖` for `k = 0..=horizon`.
pub fn plant_error_norms(traj: &Trajectory, n: usize) -> Vec<f64> {
    traj.e.iter().map(|e| e.rows(0, n).norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::build_closed_loop;
    use crate::augment::stacked_activation;
    use nalgebra::DMatrix;
    use crate::fixtures::{scalar_toy, benchmark_model, benchmark_partition, published_gains};
    use crate::protocol::NodePartition;

    fn benchmark() -> (MjnnModel, WtodConfig, TransitionCompletion) {
        let m = benchmark_model();
        let c = TransitionCompletion::from_known(&m.transitions).unwrap();
        (m, WtodConfig::identity(benchmark_partition()), c)
    }

    #[test]
    fn zero_history_and_disturbance_stay_at_rest() {
        let (m, w, c) = benchmark();
        let t = simulate(&m, &w, &published_gains(), &c, &DisturbanceSignal::Zero, &InitialHistory::zero(&m), &SimConfig::new(50, 3)).unwrap();
        assert!(t.eta.iter().all(|e| e.iter().all(|&v| v == 0.0)));
        assert_eq!(t.eta.len(), 51);
        assert_eq!(t.steps.len(), 50);
    }

    #[test]
    fn single_node_always_transmits() {
        let m = benchmark_model();
        let c = TransitionCompletion::from_known(&m.transitions).unwrap();
        let w = WtodConfig::identity(NodePartition::single(2));
        let g = EstimatorGains::zeros(4, 1, 4, 2);
        let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: false };
        let t = simulate(&m, &w, &g, &c, &d, &InitialHistory::zero(&m), &SimConfig::new(40, 1)).unwrap();
        assert_eq!(t.node_counts(1), vec![40]);
    }

    #[test]
    fn error_is_state_minus_estimate() {
        let (m, w, c) = benchmark();
        let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: false };
        let t = simulate(&m, &w, &published_gains(), &c, &d, &InitialHistory::zero(&m), &SimConfig::new(60, 9)).unwrap();
        for k in 0..=60 {
            let xb = t.eta[k].rows(0, 4).into_owned();
            assert_eq!(t.e[k], &xb - &t.x_hat[k]);
            assert_eq!(xb.rows(0, 2).into_owned(), t.x[k]);
        }
    }

    #[test]
    fn path_matches_stacked_system() {
        let (m, w, c) = benchmark();
        let g = published_gains();
        let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: false };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = InitialHistory::random(&m, 1.0, &mut rng);
        let t = simulate(&m, &w, &g, &c, &d, &h, &SimConfig::new(100, 11)).unwrap();
        let grid = AugmentedGrid::build(&m, &w.partition).unwrap();
        let cl = build_closed_loop(&grid, &g).unwrap();
        for s in &t.steps {
            let k = s.k as isize;
            let blk = cl.get(s.mode, s.node);
            let eta = t.eta_at(k);
            let eta_del = t.eta_at(k - s.delay as isize);
            let omega = d.at(s.k, 2);
            let mut big_w = DVector::zeros(8);
            big_w.rows_mut(0, 4).copy_from(&omega);
            big_w.rows_mut(4, 4).copy_from(&omega);
            let next = &blk.a_tilde * eta
                + &blk.b_tilde * stacked_activation(&m, eta)
                + &blk.c_tilde * stacked_activation(&m, eta_del)
                + &blk.d_tilde * big_w;
            assert!((next - &t.eta[s.k + 1]).amax() < 1e-10, "step {}", s.k);
        }
    }

    #[test]
    fn seeds_reproduce_bit_for_bit() {
        let (m, w, c) = benchmark();
        let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: false };
        let a = empirical_l2linf(&m, &w, &published_gains(), &c, &d, 8, &SimConfig::new(30, 5)).unwrap();
        let b = empirical_l2linf(&m, &w, &published_gains(), &c, &d, 8, &SimConfig::new(30, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.node_counts.iter().sum::<usize>(), 8 * 30);
    }

    #[test]
    fn ratio_degenerate_cases() {
        let (m, w, c) = benchmark();
        let g = published_gains();
        let z = empirical_l2linf(&m, &w, &g, &c, &DisturbanceSignal::Zero, 3, &SimConfig::new(10, 1)).unwrap();
        assert_eq!(z.ratio, RatioEstimate::NotApplicable);
        let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: false };
        let one = empirical_l2linf(&m, &w, &g, &c, &d, 3, &SimConfig::new(1, 1)).unwrap();
        match one.ratio {
            RatioEstimate::Value { ratio, .. } => assert_eq!(ratio, 0.0),
            RatioEstimate::NotApplicable => panic!("k = 0 carries v(0) = 2"),
        }
    }

    #[test]
    fn literal_exponent_envelope() {
        let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: true };
        let w = d.at(40, 1);
        assert!((w[0] - 40f64.sin()).abs() < 1e-12);
        let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: false };
        assert!((d.at(40, 1)[0] - (-2.0f64).exp() * 40f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn toy_decay_verdicts() {
        let w = WtodConfig::identity(NodePartition::single(1));
        let g = EstimatorGains::zeros(1, 1, 2, 1);
        for (a, stable) in [(0.5, true), (1.5, false)] {
            let m = scalar_toy(a);
            let c = TransitionCompletion::from_known(&m.transitions).unwrap();
            let r = mean_square_decay(&m, &w, &g, &c, 10, &SimConfig::new(500, 2), 1.0).unwrap();
            assert_eq!(matches!(r.decay, Decay::Reached(_)), stable, "a = {a}");
        }
        let m = scalar_toy(0.5);
        let c = TransitionCompletion::from_known(&m.transitions).unwrap();
        let r = mean_square_decay(&m, &w, &g, &c, 2, &SimConfig::new(5, 2), 0.0).unwrap();
        assert_eq!(r.decay, Decay::Reached(0));
    }

    fn toy_certificate(p1: f64, z: f64, tmin: usize, tmax: usize) -> (MjnnModel, Certificate) {
        let mut m = scalar_toy(0.5);
        m.delay.min = tmin;
        m.delay.max = tmax;
        let cert = Certificate {
            p1: vec![vec![DMatrix::identity(2, 2) * p1]],
            zp: DMatrix::identity(2, 2) * z,
            ze: DMatrix::identity(2, 2) * z,
            rho1: vec![1.0],
            rho2: vec![1.0],
            sigma: vec![vec![vec![0.0]]],
            gamma: None,
        };
        (m, cert)
    }

    #[test]
    fn zero_trajectory_has_zero_increments() {
        let (m, cert) = toy_certificate(2.0, 0.5, 1, 3);
        let w = WtodConfig::identity(NodePartition::single(1));
        let c = TransitionCompletion::from_known(&m.transitions).unwrap();
        let t = simulate(&m, &w, &EstimatorGains::zeros(1, 1, 2, 1), &c, &DisturbanceSignal::Zero, &InitialHistory::zero(&m), &SimConfig::new(20, 1)).unwrap();
        assert!(lyapunov_delta_check(&t, &cert, &m).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn constant_delay_functional_matches_direct_sum() {
        let (m, cert) = toy_certificate(2.0, 0.5, 2, 2);
        let w = WtodConfig::identity(NodePartition::single(1));
        let c = TransitionCompletion::from_known(&m.transitions).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = InitialHistory::random(&m, 1.0, &mut rng);
        let t = simulate(&m, &w, &EstimatorGains::zeros(1, 1, 2, 1), &c, &DisturbanceSignal::Zero, &h, &SimConfig::new(15, 1)).unwrap();
        let v = lyapunov_values(&t, &cert, &m).unwrap();
        let z = cert.z();
        for k in 0..15isize {
            let eta = t.eta_at(k);
            let mut direct = 2.0 * eta.norm_squared();
            for d in [k - 2, k - 1] {
                let e = t.eta_at(d);
                direct += (e.transpose() * &z * e)[(0, 0)];
            }
            assert!((v[k as usize] - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn csv_layout() {
        let (m, w, c) = benchmark();
        let t = simulate(&m, &w, &published_gains(), &c, &DisturbanceSignal::Zero, &InitialHistory::zero(&m), &SimConfig::new(2, 1)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &t, 2, None).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "k,mode,node,x1,x2,e1,e2,ztilde_sq,V");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,1,1,0.0000000000000000e0,"));
        assert!(lines[1].ends_with(','));
    }
}
