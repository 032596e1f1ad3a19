//! Estimator gain synthesis by cone complementarity linearization, level
//! bisection and independent verification of given gains.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::augment::EstimatorGains;
use crate::lmi::{
    assemble_analysis_partial, assemble_performance, assemble_synthesis, AssemblyOptions, Certificate,
    LinearObjective, LmiError, PartialMode, SynthesisProblem,
};
use crate::model::MjnnModel;
use crate::protocol::WtodConfig;
use crate::sdp::{minimize_linear, solve_feasibility, SolveError, SolveStatus, SolverSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct CclConfig {
    /// Stop once the trace objective is within `mu` of its lower bound.
    pub mu: f64,
    pub max_iters: usize,
    pub eps: f64,
    pub partial_mode: PartialMode,
    pub solver: SolverSettings,
}

impl Default for CclConfig {
    fn default() -> Self {
        Self { mu: 1e-6, max_iters: 50, eps: 1e-7, partial_mode: PartialMode::Vertex, solver: SolverSettings::default() }
    }
}

impl CclConfig {
    fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions { eps: self.eps, partial_mode: self.partial_mode }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CclIterate {
    pub iter: usize,
    pub objective: f64,
    /// `|Σ tr(P_t X + X_t P) − 2·pairs·(n+p)|`.
    pub trace_residual: f64,
    /// `max ‖P X − I‖_F` over all pairs.
    pub max_coupling_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisStatus {
    Converged,
    InfeasibleInit,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub status: SynthesisStatus,
    pub gamma: f64,
    pub gains: Option<EstimatorGains>,
    pub certificate: Option<Certificate>,
    pub trace: Vec<CclIterate>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("no level in [{lo}, {hi}] admits a feasible design")]
    NoFeasibleLevel { lo: f64, hi: f64 },
    #[error("invalid bracket [{lo}, {hi}]")]
    BadBracket { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyResult {
    pub status: SolveStatus,
    pub residual: f64,
    pub certificate: Option<Certificate>,
}

/// Checks given gains against the stability conditions, or against the
/// performance conditions when `gamma` is set.
pub fn verify_gains(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    gamma: Option<f64>,
    opts: &AssemblyOptions,
    solver: &SolverSettings,
) -> Result<VerifyResult, SynthesisError> {
    let assembled = match gamma {
        Some(g) => assemble_performance(model, wtod, gains, g, opts)?,
        None => assemble_analysis_partial(model, wtod, gains, opts)?,
    };
    let out = solve_feasibility(&assembled.problem, solver)?;
    let certificate = (out.status == SolveStatus::Feasible)
        .then(|| Certificate::extract(&assembled.problem, &assembled.vars, &out.assignment.y, gamma));
    Ok(VerifyResult { status: out.status, residual: out.residual, certificate })
}

fn extract_gains(syn: &SynthesisProblem, y: &nalgebra::DVector<f64>) -> EstimatorGains {
    EstimatorGains { k: syn.k.iter().map(|r| r.iter().map(|&v| syn.problem.value(y, v)).collect()).collect() }
}

fn coupling_state(syn: &SynthesisProblem, y: &nalgebra::DVector<f64>) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    syn.problem.couplings.iter().map(|&(p, x)| (syn.problem.value(y, p), syn.problem.value(y, x))).collect()
}

fn max_coupling_residual(state: &[(DMatrix<f64>, DMatrix<f64>)]) -> f64 {
    state
        .iter()
        .map(|(p, x)| (p * x - DMatrix::identity(p.nrows(), p.nrows())).norm())
        .fold(0.0, f64::max)
}

/// Cone complementarity linearization at the fixed level `gamma`.
pub fn ccl_synthesize(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gamma: f64,
    cfg: &CclConfig,
) -> Result<SynthesisResult, SynthesisError> {
    let syn = assemble_synthesis(model, wtod, gamma, &cfg.assembly())?;
    let init = solve_feasibility(&syn.problem, &cfg.solver)?;
    let mut result = SynthesisResult { status: SynthesisStatus::InfeasibleInit, gamma, gains: None, certificate: None, trace: Vec::new() };
    if init.status != SolveStatus::Feasible {
        return Ok(result);
    }
    let mut state = coupling_state(&syn, &init.assignment.y);
    let mut gains = extract_gains(&syn, &init.assignment.y);
    let a = model.n_aug() as f64;
    let bound = 2.0 * syn.problem.couplings.len() as f64 * a;
    result.status = SynthesisStatus::MaxIters;
    for iter in 1..=cfg.max_iters {
        let mut obj = LinearObjective::default();
        for (&(pv, xv), (p, x)) in syn.problem.couplings.iter().zip(&state) {
            obj.add_trace_product(syn.problem.var(xv), p);
            obj.add_trace_product(syn.problem.var(pv), x);
        }
        let out = minimize_linear(&syn.problem, &obj, &cfg.solver)?;
        if out.status != SolveStatus::Feasible {
            break;
        }
        let objective = out.objective.unwrap_or(f64::NAN);
        state = coupling_state(&syn, &out.assignment.y);
        gains = extract_gains(&syn, &out.assignment.y);
        let it = CclIterate {
            iter,
            objective,
            trace_residual: (objective - bound).abs(),
            max_coupling_residual: max_coupling_residual(&state),
        };
        let close = it.trace_residual < cfg.mu;
        result.trace.push(it);
        if close {
            let check = verify_gains(model, wtod, &gains, Some(gamma), &cfg.assembly(), &cfg.solver)?;
            if check.status == SolveStatus::Feasible {
                result.status = SynthesisStatus::Converged;
                result.certificate = check.certificate;
                break;
            }
        }
    }
    result.gains = Some(gains);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectResult {
    pub gamma: f64,
    pub synthesis: SynthesisResult,
    /// `(level, converged)` for every level tried.
    pub probes: Vec<(f64, bool)>,
}

/// Smallest level in `[lo, hi]`, to within the bracket width after `steps`
/// halvings, at which synthesis converges.
pub fn bisect_gamma(
    model: &MjnnModel,
    wtod: &WtodConfig,
    lo: f64,
    hi: f64,
    steps: usize,
    cfg: &CclConfig,
) -> Result<BisectResult, SynthesisError> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(SynthesisError::BadBracket { lo, hi });
    }
    let mut probes = Vec::new();
    let probe = |g: f64, probes: &mut Vec<(f64, bool)>| -> Result<SynthesisResult, SynthesisError> {
        let r = ccl_synthesize(model, wtod, g, cfg)?;
        probes.push((g, r.status == SynthesisStatus::Converged));
        Ok(r)
    };
    let top = probe(hi, &mut probes)?;
    if top.status != SynthesisStatus::Converged {
        return Err(SynthesisError::NoFeasibleLevel { lo, hi });
    }
    if lo == hi {
        return Ok(BisectResult { gamma: hi, synthesis: top, probes });
    }
    let bottom = probe(lo, &mut probes)?;
    if bottom.status == SynthesisStatus::Converged {
        return Ok(BisectResult { gamma: lo, synthesis: bottom, probes });
    }
    let (mut lo, mut hi, mut best) = (lo, hi, top);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let r = probe(mid, &mut probes)?;
        if r.status == SynthesisStatus::Converged {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    Ok(BisectResult { gamma: hi, synthesis: best, probes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyBisectResult {
    pub gamma: f64,
    pub verify: VerifyResult,
    /// `(level, feasible)` for every level tried.
    pub probes: Vec<(f64, bool)>,
}

/// Smallest level in `[lo, hi]` at which the given gains verify, with the
/// same probing order as [`bisect_gamma`].
#[allow(clippy::too_many_arguments)]
pub fn bisect_verify(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    lo: f64,
    hi: f64,
    steps: usize,
    opts: &AssemblyOptions,
    solver: &SolverSettings,
) -> Result<VerifyBisectResult, SynthesisError> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(SynthesisError::BadBracket { lo, hi });
    }
    let mut probes = Vec::new();
    let probe = |g: f64, probes: &mut Vec<(f64, bool)>| -> Result<VerifyResult, SynthesisError> {
        let r = verify_gains(model, wtod, gains, Some(g), opts, solver)?;
        probes.push((g, r.status == SolveStatus::Feasible));
        Ok(r)
    };
    let top = probe(hi, &mut probes)?;
    if top.status != SolveStatus::Feasible {
        return Err(SynthesisError::NoFeasibleLevel { lo, hi });
    }
    if lo == hi {
        return Ok(VerifyBisectResult { gamma: hi, verify: top, probes });
    }
    let bottom = probe(lo, &mut probes)?;
    if bottom.status == SolveStatus::Feasible {
        return Ok(VerifyBisectResult { gamma: lo, verify: bottom, probes });
    }
    let (mut lo, mut hi, mut best) = (lo, hi, top);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let r = probe(mid, &mut probes)?;
        if r.status == SolveStatus::Feasible {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    Ok(VerifyBisectResult { gamma: hi, verify: best, probes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::scalar_toy;
    use crate::protocol::NodePartition;

    fn single() -> WtodConfig {
        WtodConfig::identity(NodePartition::single(1))
    }

    #[test]
    fn toy_converges_quickly() {
        let m = scalar_toy(0.5);
        let r = ccl_synthesize(&m, &single(), 2.0, &CclConfig::default()).unwrap();
        assert_eq!(r.status, SynthesisStatus::Converged);
        assert!(r.trace.len() <= 5, "{:?}", r.trace);
        let last = r.trace.last().unwrap();
        assert!(last.trace_residual < 1e-6);
        assert!(r.certificate.is_some());
    }

    #[test]
    fn unstable_uncontrollable_toy_never_closes() {
        // The relaxed first step only asks X ⪰ P⁻¹, which a large X meets even
        // for a = 2, so the failure shows up as a loop that never certifies.
        let m = scalar_toy(2.0);
        let cfg = CclConfig { max_iters: 8, ..Default::default() };
        let r = ccl_synthesize(&m, &single(), 2.0, &cfg).unwrap();
        assert_eq!(r.status, SynthesisStatus::MaxIters);
        assert!(r.certificate.is_none());
        assert!(r.trace.iter().all(|t| t.trace_residual >= cfg.mu));
        let g = r.gains.unwrap();
        let check = verify_gains(&m, &single(), &g, Some(2.0), &cfg.assembly(), &cfg.solver).unwrap();
        assert_eq!(check.status, SolveStatus::Infeasible);
    }

    #[test]
    fn zero_gain_verdicts_on_toy() {
        let opts = AssemblyOptions::default();
        let s = SolverSettings::default();
        let g = EstimatorGains::zeros(1, 1, 2, 1);
        let ok = verify_gains(&scalar_toy(0.5), &single(), &g, None, &opts, &s).unwrap();
        assert_eq!(ok.status, SolveStatus::Feasible);
        let cert = ok.certificate.unwrap();
        assert!(crate::linalg::lambda_min(&cert.p(0, 0)) > 0.0);
        let bad = verify_gains(&scalar_toy(1.5), &single(), &g, None, &opts, &s).unwrap();
        assert_eq!(bad.status, SolveStatus::Infeasible);
    }

    #[test]
    fn bisection_brackets_the_toy_optimum() {
        // For e⁺ = a e + w and z = e the best level is 1/√(1 − a²).
        let gamma_opt = 1.0 / (1.0f64 - 0.25).sqrt();
        let r = bisect_gamma(&scalar_toy(0.5), &single(), 0.1, 10.0, 10, &CclConfig::default()).unwrap();
        assert!(r.gamma >= gamma_opt - 1e-6 && r.gamma <= gamma_opt + 0.01, "{} vs {gamma_opt}", r.gamma);
        assert_eq!(r.probes.len(), 12);
    }

    #[test]
    fn bisection_edge_cases() {
        let cfg = CclConfig::default();
        let m = scalar_toy(0.5);
        let r = bisect_gamma(&m, &single(), 3.0, 3.0, 10, &cfg).unwrap();
        assert_eq!((r.gamma, r.probes.len()), (3.0, 1));
        let r = bisect_gamma(&m, &single(), 2.0, 3.0, 10, &cfg).unwrap();
        assert_eq!((r.gamma, r.probes.len()), (2.0, 2));
        assert_eq!(
            bisect_gamma(&m, &single(), 0.1, 0.5, 4, &cfg).unwrap_err(),
            SynthesisError::NoFeasibleLevel { lo: 0.1, hi: 0.5 }
        );
        assert!(matches!(bisect_gamma(&m, &single(), 2.0, 1.0, 4, &cfg), Err(SynthesisError::BadBracket { .. })));
    }

    #[test]
    fn verify_bisection_on_toy_gain() {
        // Zero gain on a = 0.5 has the same optimum as the synthesis bisection.
        let gamma_opt = 1.0 / (1.0f64 - 0.25).sqrt();
        let g = EstimatorGains::zeros(1, 1, 2, 1);
        let r = bisect_verify(&scalar_toy(0.5), &single(), &g, 0.5, 4.0, 10, &AssemblyOptions::default(), &SolverSettings::default())
            .unwrap();
        assert!(r.gamma >= gamma_opt - 1e-6 && r.gamma <= gamma_opt + 0.01, "{} vs {gamma_opt}", r.gamma);
        assert!(r.verify.certificate.is_some());
        let bad = bisect_verify(&scalar_toy(1.5), &single(), &g, 0.5, 4.0, 10, &AssemblyOptions::default(), &SolverSettings::default());
        assert!(matches!(bad, Err(SynthesisError::NoFeasibleLevel { .. })));
    }
}
