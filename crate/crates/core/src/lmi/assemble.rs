//! Stability, performance and synthesis conditions.
//!
//! Every condition is enumerated over the current mode `i`, the current node
//! `m` and every possible next node `m'`. Within a row of the transition
//! matrix the Lyapunov weight is either the normalized known part or a single
//! unknown mode (vertex form), or one averaged bound (averaged-bound form).
//!
//! Column layout of the `ξ` part: `[η, η_τ, f̃, f̃_τ, W]` with
//! `η = [x̄; e]`, `f̃ = [f(x); f(x) − f(x̂_x)]` and `W = [ω̄; ω̄]`.

use nalgebra::{DMatrix, DVector};

use super::expr::{AffineMatrixExpr, LmiError, LmiProblem, Sense, VarId};
use super::sector_multiplier_blocks;
use crate::augment::{AugmentedGrid, EstimatorGains};
use crate::linalg::{block_diag, hstack, stack_twice};
use crate::model::{known_index_sets, MjnnModel};
use crate::protocol::{selector_matrix, WtodConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialMode {
    /// Known part and each unknown mode as separate constraints.
    Vertex,
    /// `Σ_K π_ij P_j + (1 − π_K) Σ_UK P_j` as one constraint.
    AveragedBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub eps: f64,
    pub partial_mode: PartialMode,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { eps: 1e-7, partial_mode: PartialMode::Vertex }
    }
}

/// Handles of the Lyapunov and multiplier unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateVars {
    pub p1: Vec<Vec<VarId>>,
    pub zp: VarId,
    pub ze: VarId,
    pub rho1: Vec<VarId>,
    pub rho2: Vec<VarId>,
    /// `[mode][node][other node]`, `None` on the diagonal.
    pub sigma: Vec<Vec<Vec<Option<VarId>>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub problem: LmiProblem,
    pub vars: CertificateVars,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisProblem {
    pub problem: LmiProblem,
    pub vars: CertificateVars,
    pub x1: Vec<Vec<VarId>>,
    pub k: Vec<Vec<VarId>>,
}

/// Numerical values of a feasible analysis solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub p1: Vec<Vec<DMatrix<f64>>>,
    pub zp: DMatrix<f64>,
    pub ze: DMatrix<f64>,
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub gamma: Option<f64>,
}

impl Certificate {
    pub fn extract(problem: &LmiProblem, vars: &CertificateVars, y: &DVector<f64>, gamma: Option<f64>) -> Self {
        let p1 = vars.p1.iter().map(|r| r.iter().map(|&v| problem.value(y, v)).collect()).collect();
        let sigma = vars
            .sigma
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| c.iter().map(|v| v.map_or(0.0, |id| problem.scalar(y, id))).collect())
                    .collect()
            })
            .collect();
        Self {
            p1,
            zp: problem.value(y, vars.zp),
            ze: problem.value(y, vars.ze),
            rho1: vars.rho1.iter().map(|&v| problem.scalar(y, v)).collect(),
            rho2: vars.rho2.iter().map(|&v| problem.scalar(y, v)).collect(),
            sigma,
            gamma,
        }
    }

    /// `P_{i,m} = diag(P1, P1)` on `η`.
    pub fn p(&self, mode: usize, node: usize) -> DMatrix<f64> {
        let p1 = &self.p1[mode][node];
        block_diag(&[p1, p1])
    }

    /// `Z = diag(Z_plant, Z_err)`.
    pub fn z(&self) -> DMatrix<f64> {
        block_diag(&[&self.zp, &self.ze])
    }
}

/// Weighted membership of a Lyapunov combination. The Schur form uses
/// `blkdiag(scale·X_j)` stacked against `√w_j`; the analysis form uses
/// `Σ (w_j / scale) P_j`.
#[derive(Debug, Clone)]
struct Family {
    label: String,
    scale: f64,
    members: Vec<(usize, f64)>,
}

fn families(model: &MjnnModel, i: usize, mode: PartialMode) -> Vec<Family> {
    let sets = known_index_sets(&model.transitions, i);
    let known: Vec<(usize, f64)> = sets
        .known
        .iter()
        .map(|&j| (j, model.transitions.known(i, j).unwrap_or(0.0)))
        .filter(|&(_, p)| p > 0.0)
        .collect();
    if sets.unknown.is_empty() {
        return vec![Family { label: "known".into(), scale: 1.0, members: known }];
    }
    match mode {
        PartialMode::Vertex => {
            let mut out = Vec::new();
            if sets.known_mass > 0.0 {
                out.push(Family { label: "known".into(), scale: sets.known_mass, members: known });
            }
            for &j in &sets.unknown {
                out.push(Family { label: format!("unknown{}", j + 1), scale: 1.0, members: vec![(j, 1.0)] });
            }
            out
        }
        PartialMode::AveragedBound => {
            let rest = 1.0 - sets.known_mass;
            let mut members = known;
            if rest > 0.0 {
                members.extend(sets.unknown.iter().map(|&j| (j, rest)));
            }
            vec![Family { label: "bound".into(), scale: 1.0, members }]
        }
    }
}

struct Layout {
    eta: usize,
    tau: usize,
    f: usize,
    ft: usize,
    w: Option<usize>,
    dim: usize,
}

impl Layout {
    fn new(ups: usize, a: usize, n: usize, r: usize, with_w: bool) -> Self {
        let eta = ups;
        let tau = eta + 2 * a;
        let f = tau + 2 * a;
        let ft = f + 2 * n;
        let end = ft + 2 * n;
        let (w, dim) = if with_w { (Some(end), end + 4 * r) } else { (None, end) };
        Self { eta, tau, f, ft, w, dim }
    }

    fn xi_dim(&self) -> usize {
        self.dim - self.eta
    }
}

struct Ctx<'a> {
    model: &'a MjnnModel,
    grid: AugmentedGrid,
    nodes: usize,
    n: usize,
    p: usize,
    a: usize,
    r: usize,
    q: usize,
    delay_factor: f64,
    f3l: DMatrix<f64>,
    f4l: DMatrix<f64>,
    /// `Ěᵀ Q̄(Φ_o − Φ_m) Ě` etc., indexed `[mode][node][other]`.
    nu_ee: Vec<Vec<Vec<DMatrix<f64>>>>,
    nu_ed: Vec<Vec<Vec<DMatrix<f64>>>>,
    nu_dd: Vec<Vec<Vec<DMatrix<f64>>>>,
}

impl<'a> Ctx<'a> {
    fn new(model: &'a MjnnModel, wtod: &WtodConfig) -> Result<Self, LmiError> {
        let grid = AugmentedGrid::build(model, &wtod.partition)
            .map_err(|e| LmiError::DimensionMismatch(e.to_string()))?;
        let (n, p, r, q) = (model.nx(), model.ny(), model.nw(), model.nz());
        let a = n + p;
        let nodes = wtod.nodes();
        let (f3, f4) = sector_multiplier_blocks(&model.sector);
        // η → [x; e_x]
        let mut sel = DMatrix::zeros(2 * n, 2 * a);
        for l in 0..n {
            sel[(l, l)] = 1.0;
            sel[(n + l, a + l)] = 1.0;
        }
        let f3l = sel.transpose() * f3 * &sel;
        let f4l = sel.transpose() * f4;
        let qbar = wtod.weights.q_bar();
        let phis: Vec<DMatrix<f64>> = (0..nodes).map(|m| selector_matrix(&wtod.partition, m)).collect();
        let mut nu_ee = Vec::new();
        let mut nu_ed = Vec::new();
        let mut nu_dd = Vec::new();
        for md in &model.modes {
            let e_check = hstack(&[&md.e, &(-DMatrix::<f64>::identity(p, p)), &DMatrix::zeros(p, a)]);
            let d_hat = hstack(&[&DMatrix::zeros(p, r), &md.d2, &DMatrix::zeros(p, 2 * r)]);
            let mut ee = Vec::new();
            let mut ed = Vec::new();
            let mut dd = Vec::new();
            for m in 0..nodes {
                let mut ee_m = Vec::new();
                let mut ed_m = Vec::new();
                let mut dd_m = Vec::new();
                for o in 0..nodes {
                    let w = &qbar * (&phis[o] - &phis[m]);
                    ee_m.push(e_check.transpose() * &w * &e_check);
                    ed_m.push(e_check.transpose() * &w * &d_hat);
                    dd_m.push(d_hat.transpose() * &w * &d_hat);
                }
                ee.push(ee_m);
                ed.push(ed_m);
                dd.push(dd_m);
            }
            nu_ee.push(ee);
            nu_ed.push(ed);
            nu_dd.push(dd);
        }
        Ok(Self {
            model,
            grid,
            nodes,
            n,
            p,
            a,
            r,
            q,
            delay_factor: 1.0 + (model.delay.max - model.delay.min) as f64,
            f3l,
            f4l,
            nu_ee,
            nu_ed,
            nu_dd,
        })
    }

    fn declare(&self, prob: &mut LmiProblem) -> CertificateVars {
        let eps = prob.eps;
        let nm = self.model.n_modes();
        let mut p1 = Vec::new();
        for i in 0..nm {
            p1.push((0..self.nodes).map(|m| prob.add_symmetric(&format!("P1[{},{}]", i + 1, m + 1), self.a, Some(eps))).collect());
        }
        let zp = prob.add_symmetric("Zp", self.a, Some(eps));
        let ze = prob.add_symmetric("Ze", self.a, Some(eps));
        let rho1 = (0..nm).map(|i| prob.add_scalar(&format!("rho1[{}]", i + 1), Some(eps))).collect();
        let rho2 = (0..nm).map(|i| prob.add_scalar(&format!("rho2[{}]", i + 1), Some(eps))).collect();
        let sigma = (0..nm)
            .map(|i| {
                (0..self.nodes)
                    .map(|m| {
                        (0..self.nodes)
                            .map(|o| {
                                (o != m).then(|| {
                                    prob.add_scalar(&format!("sigma[{},{},{}]", i + 1, m + 1, o + 1), Some(0.0))
                                })
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        CertificateVars { p1, zp, ze, rho1, rho2, sigma }
    }

    /// `Ω̃1` with the gain contribution included when `gain` is given.
    fn omega1(&self, i: usize, m: usize, gain: Option<&DMatrix<f64>>, lay: &Layout) -> DMatrix<f64> {
        let (a, n, r) = (self.a, self.n, self.r);
        let g = self.grid.get(i, m);
        let mut o1 = DMatrix::zeros(2 * a, lay.xi_dim());
        let c_f = lay.f - lay.eta;
        let c_ft = lay.ft - lay.eta;
        let (a_err, d_err) = match gain {
            Some(k) => (&g.a_bar - k * &g.e_bar, &g.d1_bar - k * &g.d2_bar),
            None => (g.a_bar.clone(), g.d1_bar.clone()),
        };
        o1.view_mut((0, 0), (a, a)).copy_from(&g.a_bar);
        o1.view_mut((a, a), (a, a)).copy_from(&a_err);
        let bj = &g.b_bar * stack_twice(n);
        let cj = &g.c_bar * stack_twice(n);
        o1.view_mut((0, c_f), (a, n)).copy_from(&bj);
        o1.view_mut((a, c_f + n), (a, n)).copy_from(&bj);
        o1.view_mut((0, c_ft), (a, n)).copy_from(&cj);
        o1.view_mut((a, c_ft + n), (a, n)).copy_from(&cj);
        if let Some(w) = lay.w {
            let c_w = w - lay.eta;
            o1.view_mut((0, c_w), (a, 2 * r)).copy_from(&g.d1_bar);
            o1.view_mut((a, c_w + 2 * r), (a, 2 * r)).copy_from(&d_err);
        }
        o1
    }

    fn add_omega2(&self, prob: &LmiProblem, vars: &CertificateVars, expr: &mut AffineMatrixExpr, i: usize, m: usize, lay: &Layout) {
        let (a, n) = (self.a, self.n);
        let v = |id: VarId| prob.var(id);
        let p1 = v(vars.p1[i][m]);
        expr.add_var(lay.eta, lay.eta, p1, -1.0);
        expr.add_var(lay.eta + a, lay.eta + a, p1, -1.0);
        expr.add_var(lay.eta, lay.eta, v(vars.zp), self.delay_factor);
        expr.add_var(lay.eta + a, lay.eta + a, v(vars.ze), self.delay_factor);
        expr.add_var(lay.tau, lay.tau, v(vars.zp), -1.0);
        expr.add_var(lay.tau + a, lay.tau + a, v(vars.ze), -1.0);
        let rho1 = v(vars.rho1[i]);
        let rho2 = v(vars.rho2[i]);
        let i2n = DMatrix::<f64>::identity(2 * n, 2 * n);
        expr.add_scaled(lay.eta, lay.eta, rho1, &(-&self.f3l));
        expr.add_scaled(lay.eta, lay.f, rho1, &self.f4l);
        expr.add_scaled(lay.f, lay.f, rho1, &(-&i2n));
        expr.add_scaled(lay.tau, lay.tau, rho2, &(-&self.f3l));
        expr.add_scaled(lay.tau, lay.ft, rho2, &self.f4l);
        expr.add_scaled(lay.ft, lay.ft, rho2, &(-&i2n));
        for o in 0..self.nodes {
            let Some(sid) = vars.sigma[i][m][o] else { continue };
            let s = v(sid);
            expr.add_scaled(lay.eta, lay.eta, s, &(-&self.nu_ee[i][m][o]));
            if let Some(w) = lay.w {
                expr.add_scaled(lay.eta, w, s, &(-&self.nu_ed[i][m][o]));
                expr.add_scaled(w, w, s, &(-&self.nu_dd[i][m][o]));
            }
        }
        if let Some(w) = lay.w {
            expr.add_const(w, w, &(-DMatrix::<f64>::identity(4 * self.r, 4 * self.r)));
        }
    }

    /// `[[−Υ, ΥΩ̃1], [*, Ω̃2]] ⪯ −εI` with `Υ = Σ (w_j/scale) diag(P1_{j,m'}, P1_{j,m'})`.
    fn analysis_constraint(
        &self,
        prob: &LmiProblem,
        vars: &CertificateVars,
        i: usize,
        m: usize,
        next: usize,
        fam: &Family,
        gains: &EstimatorGains,
        with_w: bool,
    ) -> AffineMatrixExpr {
        let a = self.a;
        let lay = Layout::new(2 * a, a, self.n, self.r, with_w);
        let mut expr = AffineMatrixExpr::new(lay.dim);
        let o1 = self.omega1(i, m, Some(gains.get(i, m)), &lay);
        let top = o1.rows(0, a).into_owned();
        let bottom = o1.rows(a, a).into_owned();
        let ia = DMatrix::<f64>::identity(a, a);
        for &(j, w) in &fam.members {
            let c = w / fam.scale;
            let pj = prob.var(vars.p1[j][next]);
            expr.add_var(0, 0, pj, -c);
            expr.add_var(a, a, pj, -c);
            expr.add_term(0, lay.eta, &ia, pj, &top, c);
            expr.add_term(a, lay.eta, &ia, pj, &bottom, c);
        }
        self.add_omega2(prob, vars, &mut expr, i, m, &lay);
        expr
    }

    /// `[[P_{i,m}, M̃ᵀ], [M̃, γ²I]] ⪰ εI`.
    fn performance_constraint(&self, prob: &LmiProblem, vars: &CertificateVars, i: usize, m: usize, gamma: f64) -> AffineMatrixExpr {
        let a = self.a;
        let mut expr = AffineMatrixExpr::new(2 * a + self.q);
        let p1 = prob.var(vars.p1[i][m]);
        expr.add_var(0, 0, p1, 1.0);
        expr.add_var(a, a, p1, 1.0);
        let m_bar = &self.grid.get(i, m).m_bar;
        let mut mt = DMatrix::zeros(2 * a, self.q);
        mt.view_mut((a, 0), (a, self.q)).copy_from(&m_bar.transpose());
        expr.add_const(0, 2 * a, &mt);
        expr.add_const(2 * a, 2 * a, &(DMatrix::<f64>::identity(self.q, self.q) * (gamma * gamma)));
        expr
    }

    fn emit_analysis(&self, prob: &mut LmiProblem, vars: &CertificateVars, gains: &EstimatorGains, mode: PartialMode, with_w: bool) {
        for i in 0..self.model.n_modes() {
            let fams = families(self.model, i, mode);
            for m in 0..self.nodes {
                for next in 0..self.nodes {
                    for fam in &fams {
                        let expr = self.analysis_constraint(prob, vars, i, m, next, fam, gains, with_w);
                        let name = format!("stab[{},{},{}:{}]", i + 1, m + 1, next + 1, fam.label);
                        prob.add_constraint(name, expr, Sense::NegativeDefinite);
                    }
                }
            }
        }
    }
}

fn check_gains(ctx: &Ctx, gains: &EstimatorGains) -> Result<(), LmiError> {
    gains
        .check(ctx.model.n_modes(), ctx.nodes, ctx.a, ctx.p)
        .map_err(|e| LmiError::DimensionMismatch(e.to_string()))
}

/// Mean-square stability conditions for a fully known transition matrix.
pub fn assemble_analysis_known(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    opts: &AssemblyOptions,
) -> Result<Assembled, LmiError> {
    for i in 0..model.n_modes() {
        if !known_index_sets(&model.transitions, i).unknown.is_empty() {
            return Err(LmiError::RequiresFullTP { row: i });
        }
    }
    assemble_analysis_partial(model, wtod, gains, opts)
}

/// Mean-square stability conditions under a partially known transition matrix.
pub fn assemble_analysis_partial(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    opts: &AssemblyOptions,
) -> Result<Assembled, LmiError> {
    let ctx = Ctx::new(model, wtod)?;
    check_gains(&ctx, gains)?;
    let mut problem = LmiProblem::new(opts.eps);
    let vars = ctx.declare(&mut problem);
    ctx.emit_analysis(&mut problem, &vars, gains, opts.partial_mode, false);
    Ok(Assembled { problem, vars })
}

/// Stability with disturbance columns plus the peak-output bound at level `gamma`.
pub fn assemble_performance(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gains: &EstimatorGains,
    gamma: f64,
    opts: &AssemblyOptions,
) -> Result<Assembled, LmiError> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(LmiError::BadGamma(gamma));
    }
    let ctx = Ctx::new(model, wtod)?;
    check_gains(&ctx, gains)?;
    let mut problem = LmiProblem::new(opts.eps);
    let vars = ctx.declare(&mut problem);
    ctx.emit_analysis(&mut problem, &vars, gains, opts.partial_mode, true);
    for i in 0..model.n_modes() {
        for m in 0..ctx.nodes {
            let expr = ctx.performance_constraint(&problem, &vars, i, m, gamma);
            problem.add_constraint(format!("perf[{},{}]", i + 1, m + 1), expr, Sense::PositiveDefinite);
        }
    }
    Ok(Assembled { problem, vars })
}

/// Gain synthesis conditions with `X ≈ P⁻¹` couplings and the relaxation
/// `[[P1, I], [I, X1]] ⪰ 0`.
pub fn assemble_synthesis(
    model: &MjnnModel,
    wtod: &WtodConfig,
    gamma: f64,
    opts: &AssemblyOptions,
) -> Result<SynthesisProblem, LmiError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(LmiError::BadGamma(gamma));
    }
    let ctx = Ctx::new(model, wtod)?;
    let (a, p, r) = (ctx.a, ctx.p, ctx.r);
    let nm = model.n_modes();
    let mut problem = LmiProblem::new(opts.eps);
    let vars = ctx.declare(&mut problem);
    let eps = opts.eps;
    let x1: Vec<Vec<VarId>> = (0..nm)
        .map(|i| (0..ctx.nodes).map(|m| problem.add_symmetric(&format!("X1[{},{}]", i + 1, m + 1), a, Some(eps))).collect())
        .collect();
    let k: Vec<Vec<VarId>> = (0..nm)
        .map(|i| (0..ctx.nodes).map(|m| problem.add_matrix(&format!("K[{},{}]", i + 1, m + 1), a, p)).collect())
        .collect();
    let ia = DMatrix::<f64>::identity(a, a);
    for i in 0..nm {
        let fams = families(model, i, opts.partial_mode);
        for m in 0..ctx.nodes {
            let g = ctx.grid.get(i, m);
            let kvar = problem.var(k[i][m]).clone();
            for next in 0..ctx.nodes {
                for fam in &fams {
                    let ups = 2 * a * fam.members.len();
                    let lay = Layout::new(ups, a, ctx.n, r, true);
                    let mut expr = AffineMatrixExpr::new(lay.dim);
                    let o1 = ctx.omega1(i, m, None, &lay);
                    for (t, &(j, w)) in fam.members.iter().enumerate() {
                        let row = 2 * a * t;
                        let xj = problem.var(x1[j][next]);
                        expr.add_var(row, row, xj, -fam.scale);
                        expr.add_var(row + a, row + a, xj, -fam.scale);
                        let sw = w.sqrt();
                        expr.add_const(row, lay.eta, &(&o1 * sw));
                        expr.add_term(row + a, lay.eta + a, &ia, &kvar, &g.e_bar, -sw);
                        expr.add_term(row + a, lay.w.expect("disturbance columns") + 2 * r, &ia, &kvar, &g.d2_bar, -sw);
                    }
                    ctx.add_omega2(&problem, &vars, &mut expr, i, m, &lay);
                    let name = format!("syn[{},{},{}:{}]", i + 1, m + 1, next + 1, fam.label);
                    problem.add_constraint(name, expr, Sense::NegativeDefinite);
                }
            }
            let expr = ctx.performance_constraint(&problem, &vars, i, m, gamma);
            problem.add_constraint(format!("perf[{},{}]", i + 1, m + 1), expr, Sense::PositiveDefinite);
            let mut cone = AffineMatrixExpr::new(2 * a);
            cone.add_var(0, 0, problem.var(vars.p1[i][m]), 1.0);
            cone.add_var(a, a, problem.var(x1[i][m]), 1.0);
            cone.add_const(0, a, &ia);
            problem.add_constraint(format!("cone[{},{}]", i + 1, m + 1), cone, Sense::PositiveSemidefinite);
            problem.couplings.push((vars.p1[i][m], x1[i][m]));
        }
    }
    Ok(SynthesisProblem { problem, vars, x1, k })
}
