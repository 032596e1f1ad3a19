//! Primal-dual interior-point solver for the matrix-inequality problems built
//! in [`crate::lmi`].
//!
//! Constraints are brought to the dual standard form
//! `S(y) = C − Σ y_k A_k ⪰ 0` and solved with the HKM search direction and
//! Mehrotra predictor-corrector steps. Iterates stay dual feasible: `S` is
//! recomputed from `y` after every step.
//!
//! Feasibility uses a phase-one problem with a shared shift `t`
//! (`S(y) + tI ⪰ 0`, maximize `−t`). Every scalar is boxed by `|y_k| ≤ R` to
//! keep both problems bounded.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::linalg::lambda_min;
use crate::lmi::{AffineMatrixExpr, Assignment, LinearObjective, LmiProblem, Sense};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Relative duality gap and primal infeasibility target.
    pub tol: f64,
    /// Accepted constraint residual for a `Feasible` verdict.
    pub feas_tol: f64,
    pub max_iters: usize,
    pub box_radius: f64,
    pub step_fraction: f64,
    /// Phase one stops once the common margin exceeds this value when a
    /// second phase follows.
    pub phase1_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-9, feas_tol: 1e-9, max_iters: 100, box_radius: 1e6, step_fraction: 0.98, phase1_margin: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub assignment: Assignment,
    /// Worst constraint violation at `assignment`, from dense eigenvalues.
    pub residual: f64,
    pub objective: Option<f64>,
    /// Whether the optimization phase met the gap tolerance.
    pub converged: bool,
    pub iterations: usize,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("malformed problem: {0}")]
    MalformedProblem(String),
    #[error("objective is unbounded below on the feasible set (scalar {0} reached the box)")]
    Unbounded(usize),
}

/// One dense block `C − Σ y_k A_k`. `A_k` entries are listed over both triangles.
#[derive(Debug, Clone)]
struct Block {
    dim: usize,
    c: DMatrix<f64>,
    vars: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl Block {
    fn slack(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.c.clone();
        for (k, entries) in &self.vars {
            let yk = y[*k];
            if yk != 0.0 {
                for &(i, j, v) in entries {
                    s[(i, j)] -= yk * v;
                }
            }
        }
        s
    }

    fn adjoint(&self, dy: &DVector<f64>) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim, self.dim);
        for (k, entries) in &self.vars {
            let d = dy[*k];
            if d != 0.0 {
                for &(i, j, v) in entries {
                    s[(i, j)] += d * v;
                }
            }
        }
        s
    }
}

fn inner(entries: &[(usize, usize, f64)], h: &DMatrix<f64>) -> f64 {
    entries.iter().map(|&(i, j, v)| v * h[(j, i)]).sum()
}

fn full_entries(upper: &crate::lmi::UpperEntries, map: &[usize], sign: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (&(i, j), &v) in upper {
        if v == 0.0 {
            continue;
        }
        let (a, b) = (map[i], map[j]);
        out.push((a, b, sign * v));
        if a != b {
            out.push((b, a, sign * v));
        }
    }
    out
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let n = parent[c];
        parent[c] = r;
        c = n;
    }
    r
}

enum Split {
    Blocks(Vec<Block>),
    /// A variable-free component that cannot be satisfied.
    ConstantViolation,
}

/// Splits `sign·F(y) − shift·I ⪰ 0` into its connected diagonal blocks.
fn convert(expr: &AffineMatrixExpr, sign: f64, shift: f64) -> Split {
    let n = expr.dim;
    let mut parent: Vec<usize> = (0..n).collect();
    for row in expr.pattern().iter().enumerate() {
        for (j, &nz) in row.1.iter().enumerate() {
            if nz {
                let (a, b) = (find(&mut parent, row.0), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_group = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_group[r] == usize::MAX {
            root_group[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_group[r]].push(i);
    }
    let c_full = expr.constant_matrix() * sign - DMatrix::identity(n, n) * shift;
    let mut blocks = Vec::new();
    for g in groups {
        let mut local = vec![usize::MAX; n];
        for (li, &gi) in g.iter().enumerate() {
            local[gi] = li;
        }
        let d = g.len();
        let c = DMatrix::from_fn(d, d, |a, b| c_full[(g[a], g[b])]);
        let mut vars = Vec::new();
        for (&s, upper) in &expr.terms {
            let restricted: crate::lmi::UpperEntries =
                upper.iter().filter(|(&(i, _), _)| local[i] != usize::MAX).map(|(&k, &v)| (k, v)).collect();
            // Dual form uses −A_k, so the coefficient sign flips.
            let entries = full_entries(&restricted, &local, -sign);
            if !entries.is_empty() {
                vars.push((s, entries));
            }
        }
        if vars.is_empty() {
            if lambda_min(&c) < 0.0 {
                return Split::ConstantViolation;
            }
            continue;
        }
        blocks.push(Block { dim: d, c, vars });
    }
    Split::Blocks(blocks)
}

fn validate(problem: &LmiProblem) -> Result<(), SolveError> {
    let mut total = 0;
    for v in &problem.vars {
        if v.offset != total {
            return Err(SolveError::MalformedProblem(format!("variable {} has offset {}", v.name, v.offset)));
        }
        total += v.kind.scalars();
        if let Some(lb) = v.lower_bound {
            if !lb.is_finite() {
                return Err(SolveError::MalformedProblem(format!("bound of {} is not finite", v.name)));
            }
        }
    }
    if total != problem.n_scalars {
        return Err(SolveError::MalformedProblem("scalar count mismatch".into()));
    }
    for c in &problem.constraints {
        let ok = entries_ok(&c.expr) && c.expr.terms.keys().all(|&s| s < total);
        if !ok {
            return Err(SolveError::MalformedProblem(format!("constraint {} is malformed", c.name)));
        }
    }
    if !problem.eps.is_finite() || problem.eps < 0.0 {
        return Err(SolveError::MalformedProblem("eps must be finite and non-negative".into()));
    }
    Ok(())
}

fn entries_ok(expr: &AffineMatrixExpr) -> bool {
    let d = expr.dim;
    let inside = |e: &crate::lmi::UpperEntries| e.iter().all(|(&(i, j), v)| i <= j && j < d && v.is_finite());
    inside(&expr.constant) && expr.terms.values().all(inside)
}

/// Constraint and bound blocks of `problem`, or `None` if a constant block is violated.
fn problem_blocks(problem: &LmiProblem) -> Option<Vec<Block>> {
    let mut blocks = Vec::new();
    let mut push = |split: Split| match split {
        Split::Blocks(b) => {
            blocks.extend(b);
            true
        }
        Split::ConstantViolation => false,
    };
    for c in &problem.constraints {
        let (sign, shift) = match c.sense {
            Sense::NegativeDefinite => (-1.0, problem.eps),
            Sense::PositiveDefinite => (1.0, problem.eps),
            Sense::PositiveSemidefinite => (1.0, 0.0),
        };
        if !push(convert(&c.expr, sign, shift)) {
            return None;
        }
    }
    for v in &problem.vars {
        let Some(lb) = v.lower_bound else { continue };
        let (r, _) = v.kind.shape();
        let mut e = AffineMatrixExpr::new(r);
        e.add_var(0, 0, v, 1.0);
        if !push(convert(&e, 1.0, lb)) {
            return None;
        }
    }
    Some(blocks)
}

fn box_blocks(m: usize, radius: f64) -> Vec<Block> {
    let mut out = Vec::with_capacity(2 * m);
    for k in 0..m {
        for sign in [1.0, -1.0] {
            out.push(Block {
                dim: 1,
                c: DMatrix::from_element(1, 1, radius),
                vars: vec![(k, vec![(0, 0, sign)])],
            });
        }
    }
    out
}

fn chol(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// Largest `α` with `X + αD ⪰ 0`, given the Cholesky factor of `X`.
fn max_step(xc: &Cholesky<f64, Dyn>, d: &DMatrix<f64>) -> f64 {
    if d.nrows() == 1 {
        let x = xc.l()[(0, 0)].powi(2);
        return if d[(0, 0)] < 0.0 { -x / d[(0, 0)] } else { f64::INFINITY };
    }
    let l = xc.l();
    let t = l.solve_lower_triangular(d).expect("nonsingular factor");
    let w = l.solve_lower_triangular(&t.transpose()).expect("nonsingular factor");
    let lm = lambda_min(&((&w + w.transpose()) * 0.5));
    if lm >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lm
    }
}

/// Iterate summary handed to the stopping callback.
struct Progress<'a> {
    y: &'a DVector<f64>,
    pobj: f64,
    dobj: f64,
    abs_gap: f64,
    pinf: f64,
}

struct IpmOutcome {
    y: DVector<f64>,
    x: Vec<DMatrix<f64>>,
    converged: bool,
    iterations: usize,
}

struct Ipm<'a> {
    blocks: &'a [Block],
    b: DVector<f64>,
    settings: &'a SolverSettings,
    log: &'a mut Vec<String>,
    tag: &'static str,
}

impl Ipm<'_> {
    fn schur(&self, x: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.b.len();
        let mut big = DMatrix::zeros(m, m);
        for (blk, (xb, sb)) in self.blocks.iter().zip(x.iter().zip(sinv)) {
            let d = blk.dim;
            for (ka, (k, ak)) in blk.vars.iter().enumerate() {
                // U = X A_k S⁻¹
                let mut t = DMatrix::<f64>::zeros(d, d);
                for &(i, j, v) in ak {
                    let col = xb.column(i) * v;
                    let mut tj = t.column_mut(j);
                    tj += col;
                }
                let u = &t * sb;
                for (l, al) in &blk.vars[ka..] {
                    let val = inner(al, &u);
                    big[(*k, *l)] += val;
                    if k != l {
                        big[(*l, *k)] += val;
                    }
                }
            }
        }
        big
    }

    fn apply_a(&self, h: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.b.len());
        for (blk, hb) in self.blocks.iter().zip(h) {
            for (k, ak) in &blk.vars {
                out[*k] += inner(ak, hb);
            }
        }
        out
    }

    fn direction(
        &self,
        mchol: &Cholesky<f64, Dyn>,
        rp: &DVector<f64>,
        x: &[DMatrix<f64>],
        sinv: &[DMatrix<f64>],
        h: Vec<DMatrix<f64>>,
    ) -> (DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let rhs = rp - self.apply_a(&h);
        let dy = mchol.solve(&rhs);
        let mut dxs = Vec::with_capacity(self.blocks.len());
        let mut dss = Vec::with_capacity(self.blocks.len());
        for (bi, blk) in self.blocks.iter().enumerate() {
            let ds = -blk.adjoint(&dy);
            let dx = &h[bi] - &x[bi] * &ds * &sinv[bi];
            dxs.push((&dx + dx.transpose()) * 0.5);
            dss.push(ds);
        }
        (dy, dxs, dss)
    }

    fn step_lengths(&self, xch: &[Cholesky<f64, Dyn>], sch: &[Cholesky<f64, Dyn>], dx: &[DMatrix<f64>], ds: &[DMatrix<f64>]) -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for bi in 0..self.blocks.len() {
            ap = ap.min(max_step(&xch[bi], &dx[bi]));
            ad = ad.min(max_step(&sch[bi], &ds[bi]));
        }
        (ap, ad)
    }

    fn factor_m(&self, mut m: DMatrix<f64>) -> Cholesky<f64, Dyn> {
        let scale = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
        let mut reg = 0.0;
        loop {
            if let Some(c) = chol(&m) {
                return c;
            }
            let next = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
            for i in 0..m.nrows() {
                m[(i, i)] += next - reg;
            }
            reg = next;
        }
    }

    fn run(
        &mut self,
        y0: DVector<f64>,
        x_scale: f64,
        mut stop: impl FnMut(&Progress) -> bool,
    ) -> IpmOutcome {
        let nb = self.blocks.len();
        let n_total: usize = self.blocks.iter().map(|b| b.dim).sum();
        let mut y = y0;
        let mut x: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| DMatrix::identity(b.dim, b.dim) * x_scale).collect();
        let mut s: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| b.slack(&y)).collect();
        let bnorm = self.b.norm();
        let frac = self.settings.step_fraction;
        let mut stalls = 0;
        for it in 0..self.settings.max_iters {
            let sch: Vec<_> = s.iter().map(|m| chol(m).expect("slack stays positive definite")).collect();
            let xch: Vec<_> = match x.iter().map(chol).collect::<Option<Vec<_>>>() {
                Some(v) => v,
                None => {
                    self.log.push(format!("{} {it}: primal iterate lost definiteness", self.tag));
                    return IpmOutcome { y, x, converged: false, iterations: it };
                }
            };
            let sinv: Vec<DMatrix<f64>> = sch.iter().map(|c| c.inverse()).collect();
            let gap: f64 = x.iter().zip(&s).map(|(a, b)| a.component_mul(b).sum()).sum();
            let mu = gap / n_total as f64;
            let rp = &self.b - self.apply_a(&x);
            let dobj = self.b.dot(&y);
            let pobj: f64 = self.blocks.iter().zip(&x).map(|(b, xb)| b.c.component_mul(xb).sum()).sum();
            let rel_gap = gap / (1.0 + dobj.abs());
            let pinf = rp.norm() / (1.0 + bnorm);
            self.log.push(format!(
                "{} {it}: pobj {pobj:.10e} dobj {dobj:.10e} gap {rel_gap:.3e} pinf {pinf:.3e} mu {mu:.3e}",
                self.tag
            ));
            if stop(&Progress { y: &y, pobj, dobj, abs_gap: gap, pinf }) {
                return IpmOutcome { y, x, converged: false, iterations: it };
            }
            if rel_gap <= self.settings.tol && pinf <= self.settings.tol {
                return IpmOutcome { y, x, converged: true, iterations: it };
            }
            let mchol = self.factor_m(self.schur(&x, &sinv));
            let h_aff: Vec<DMatrix<f64>> = x.iter().map(|xb| -xb).collect();
            let (_, dxa, dsa) = self.direction(&mchol, &rp, &x, &sinv, h_aff);
            let (apa, ada) = self.step_lengths(&xch, &sch, &dxa, &dsa);
            let (apa, ada) = (apa.min(1.0), ada.min(1.0));
            let mut gap_aff = 0.0;
            for bi in 0..nb {
                let xa = &x[bi] + &dxa[bi] * apa;
                let sa = &s[bi] + &dsa[bi] * ada;
                gap_aff += xa.component_mul(&sa).sum();
            }
            let sigma = ((gap_aff / gap).max(0.0)).powi(3).min(1.0);
            let h: Vec<DMatrix<f64>> = (0..nb)
                .map(|bi| (&sinv[bi] * (sigma * mu)) - &x[bi] - &dxa[bi] * &dsa[bi] * &sinv[bi])
                .collect();
            let (dy, dx, ds) = self.direction(&mchol, &rp, &x, &sinv, h);
            let (apm, adm) = self.step_lengths(&xch, &sch, &dx, &ds);
            let ap = (frac * apm).min(1.0);
            let mut ad = (frac * adm).min(1.0);
            let mut ap = ap;
            loop {
                let xn: Vec<DMatrix<f64>> = (0..nb)
                    .map(|bi| {
                        let v = &x[bi] + &dx[bi] * ap;
                        (&v + v.transpose()) * 0.5
                    })
                    .collect();
                if xn.iter().all(|m| chol(m).is_some()) {
                    x = xn;
                    break;
                }
                ap *= 0.5;
                if ap < 1e-16 {
                    break;
                }
            }
            loop {
                let yn = &y + &dy * ad;
                let sn: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| b.slack(&yn)).collect();
                if sn.iter().all(|m| chol(m).is_some()) {
                    y = yn;
                    s = sn;
                    break;
                }
                ad *= 0.5;
                if ad < 1e-16 {
                    break;
                }
            }
            if ap < 1e-9 && ad < 1e-9 {
                stalls += 1;
                if stalls >= 3 {
                    self.log.push(format!("{} {it}: stalled", self.tag));
                    return IpmOutcome { y, x, converged: false, iterations: it + 1 };
                }
            } else {
                stalls = 0;
            }
        }
        IpmOutcome { y, x, converged: false, iterations: self.settings.max_iters }
    }
}

struct PhaseOne {
    y: Option<DVector<f64>>,
    iterations: usize,
    /// The search ended with a verdict rather than at the iteration limit.
    decided: bool,
    margin: f64,
}

/// Finds `y` with every block strictly positive definite, stopping once the
/// common margin exceeds `target`.
fn phase_one(
    blocks: &[Block],
    m: usize,
    settings: &SolverSettings,
    target: f64,
    log: &mut Vec<String>,
) -> PhaseOne {
    if blocks.is_empty() {
        return PhaseOne { y: Some(DVector::zeros(m)), iterations: 0, decided: true, margin: f64::INFINITY };
    }
    let t_idx = m;
    let mut lifted: Vec<Block> = blocks
        .iter()
        .cloned()
        .map(|mut b| {
            let diag = (0..b.dim).map(|i| (i, i, -1.0)).collect();
            b.vars.push((t_idx, diag));
            b
        })
        .collect();
    let worst = blocks.iter().map(|b| lambda_min(&b.c)).fold(f64::INFINITY, f64::min);
    let t0 = (-worst).max(0.0) + 1.0;
    lifted.extend(box_blocks(m, settings.box_radius));
    let mut b = DVector::zeros(m + 1);
    b[t_idx] = -1.0;
    let mut y0 = DVector::zeros(m + 1);
    y0[t_idx] = t0;
    let originals = blocks;
    let mut found: Option<DVector<f64>> = None;
    let mut certified_empty = false;
    let out = {
        let mut ipm = Ipm { blocks: &lifted, b, settings, log, tag: "phase1" };
        ipm.run(y0, 1.0, |p| {
            let t = p.y[t_idx];
            if t < -target || (target == 0.0 && t < 0.0) {
                let yy = p.y.rows(0, m).into_owned();
                if originals.iter().all(|blk| chol(&blk.slack(&yy)).is_some()) {
                    found = Some(yy);
                    return true;
                }
            }
            // The primal objective bounds the best margin from above.
            if p.pobj < 0.0 && p.abs_gap < 0.5 * p.dobj.abs() && p.pinf <= settings.tol.sqrt() * 1e-2 {
                certified_empty = true;
                return true;
            }
            false
        })
    };
    let t = out.y[t_idx];
    if found.is_none() && t < 0.0 {
        let yy = out.y.rows(0, m).into_owned();
        if originals.iter().all(|blk| chol(&blk.slack(&yy)).is_some()) {
            found = Some(yy);
        }
    }
    let decided = found.is_some() || certified_empty || out.converged;
    PhaseOne { y: found, iterations: out.iterations, decided, margin: -t }
}

fn outcome(
    problem: &LmiProblem,
    status: SolveStatus,
    y: DVector<f64>,
    objective: Option<f64>,
    converged: bool,
    iterations: usize,
    log: Vec<String>,
) -> SolveOutcome {
    let residual = if problem.constraints.is_empty() && problem.vars.iter().all(|v| v.lower_bound.is_none()) {
        0.0
    } else {
        problem.residual(&y)
    };
    SolveOutcome { status, assignment: Assignment { y }, residual, objective, converged, iterations, log }
}

/// Searches for an assignment satisfying every constraint of `problem`.
pub fn solve_feasibility(problem: &LmiProblem, settings: &SolverSettings) -> Result<SolveOutcome, SolveError> {
    validate(problem)?;
    let m = problem.n_scalars;
    let mut log = Vec::new();
    let Some(blocks) = problem_blocks(problem) else {
        log.push("constant block violated".into());
        return Ok(outcome(problem, SolveStatus::Infeasible, DVector::zeros(m), None, true, 0, log));
    };
    let p1 = phase_one(&blocks, m, settings, 0.0, &mut log);
    Ok(match p1.y {
        Some(y) => {
            let out = outcome(problem, SolveStatus::Feasible, y, None, true, p1.iterations, log);
            confirm(out, settings)
        }
        None => {
            let status = if p1.decided { SolveStatus::Infeasible } else { SolveStatus::IterationLimit };
            outcome(problem, status, DVector::zeros(m), None, p1.decided, p1.iterations, log)
        }
    })
}

/// Downgrades a `Feasible` verdict that the dense replay does not confirm.
fn confirm(mut out: SolveOutcome, settings: &SolverSettings) -> SolveOutcome {
    if out.status == SolveStatus::Feasible && out.residual > settings.feas_tol {
        out.log.push(format!("replay residual {:.3e} exceeds tolerance", out.residual));
        out.status = SolveStatus::IterationLimit;
    }
    out
}

/// Minimizes `objective` over the feasible set of `problem`.
pub fn minimize_linear(
    problem: &LmiProblem,
    objective: &LinearObjective,
    settings: &SolverSettings,
) -> Result<SolveOutcome, SolveError> {
    validate(problem)?;
    let m = problem.n_scalars;
    if let Some((&k, _)) = objective.coeffs.iter().find(|(&k, c)| k >= m || !c.is_finite()) {
        return Err(SolveError::MalformedProblem(format!("objective entry {k} is invalid")));
    }
    let mut log = Vec::new();
    let Some(blocks) = problem_blocks(problem) else {
        log.push("constant block violated".into());
        return Ok(outcome(problem, SolveStatus::Infeasible, DVector::zeros(m), None, true, 0, log));
    };
    let p1 = phase_one(&blocks, m, settings, settings.phase1_margin, &mut log);
    let Some(y0) = p1.y else {
        let status = if p1.decided { SolveStatus::Infeasible } else { SolveStatus::IterationLimit };
        return Ok(outcome(problem, status, DVector::zeros(m), None, p1.decided, p1.iterations, log));
    };
    log.push(format!("phase1 margin {:.3e}", p1.margin));
    let mut all = blocks;
    let n_prob = all.len();
    all.extend(box_blocks(m, settings.box_radius));
    let mut b = DVector::zeros(m);
    for (&k, &c) in &objective.coeffs {
        b[k] = -c;
    }
    let x_scale = b.amax().max(1.0);
    let out = {
        let mut ipm = Ipm { blocks: &all, b: b.clone(), settings, log: &mut log, tag: "phase2" };
        ipm.run(y0, x_scale, |_| false)
    };
    let radius = settings.box_radius;
    for idx in 0..all.len() - n_prob {
        let k = idx / 2;
        let mult = out.x[n_prob + idx][(0, 0)];
        if out.y[k].abs() >= 0.999 * radius && mult > settings.tol.sqrt() * (1.0 + b.amax()) {
            return Err(SolveError::Unbounded(k));
        }
    }
    let obj = objective.evaluate(&out.y);
    let iterations = p1.iterations + out.iterations;
    let res = outcome(problem, SolveStatus::Feasible, out.y, Some(obj), out.converged, iterations, log);
    Ok(confirm(res, settings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::LmiProblem;

    fn lyap(a: f64, eps: f64) -> LmiProblem {
        // a²P − P ≺ 0, P ≻ 0
        let mut p = LmiProblem::new(eps);
        let v = p.add_symmetric("P", 1, Some(eps));
        let mut e = AffineMatrixExpr::new(1);
        e.add_var(0, 0, p.var(v), a * a - 1.0);
        p.add_constraint("lyap", e, Sense::NegativeDefinite);
        p
    }

    #[test]
    fn scalar_lyapunov_verdicts() {
        let s = SolverSettings::default();
        let ok = solve_feasibility(&lyap(0.5, 1e-7), &s).unwrap();
        assert_eq!(ok.status, SolveStatus::Feasible);
        assert!(ok.residual <= 0.0);
        let bad = solve_feasibility(&lyap(1.5, 1e-7), &s).unwrap();
        assert_eq!(bad.status, SolveStatus::Infeasible);
    }

    #[test]
    fn empty_problem_is_feasible() {
        let p = LmiProblem::new(1e-7);
        let out = solve_feasibility(&p, &SolverSettings::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        assert_eq!(out.assignment.y.len(), 0);
    }

    #[test]
    fn constant_violation_is_infeasible() {
        let mut p = LmiProblem::new(1e-7);
        p.add_scalar("unused", None);
        let mut e = AffineMatrixExpr::new(1);
        e.add_const(0, 0, &DMatrix::from_element(1, 1, 1.0));
        p.add_constraint("c", e, Sense::NegativeDefinite);
        assert_eq!(solve_feasibility(&p, &SolverSettings::default()).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn trace_minimization() {
        // min tr P subject to P ⪰ I (2×2)
        let mut p = LmiProblem::new(0.0);
        let v = p.add_symmetric("P", 2, None);
        let mut e = AffineMatrixExpr::new(2);
        e.add_var(0, 0, p.var(v), 1.0);
        e.add_const(0, 0, &-DMatrix::<f64>::identity(2, 2));
        p.add_constraint("lower", e, Sense::PositiveSemidefinite);
        let mut obj = LinearObjective::default();
        obj.add_trace_product(p.var(v), &DMatrix::identity(2, 2));
        let out = minimize_linear(&p, &obj, &SolverSettings::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        assert!(out.converged);
        assert!((out.objective.unwrap() - 2.0).abs() < 1e-6, "{:?}", out.objective);
    }

    #[test]
    fn scalar_bound_minimization_and_unbounded() {
        let mut p = LmiProblem::new(0.0);
        let v = p.add_scalar("p", Some(3.0));
        let mut obj = LinearObjective::default();
        obj.add_scalar(p.var(v), 1.0);
        let out = minimize_linear(&p, &obj, &SolverSettings::default()).unwrap();
        assert!((out.objective.unwrap() - 3.0).abs() < 1e-6);

        let mut q = LmiProblem::new(0.0);
        let w = q.add_scalar("p", None);
        let mut e = AffineMatrixExpr::new(1);
        e.add_var(0, 0, q.var(w), 1.0);
        e.add_const(0, 0, &DMatrix::from_element(1, 1, -1.0));
        q.add_constraint("le1", e, Sense::NegativeDefinite);
        let mut obj = LinearObjective::default();
        obj.add_scalar(q.var(w), 1.0);
        assert!(matches!(minimize_linear(&q, &obj, &SolverSettings::default()), Err(SolveError::Unbounded(0))));
    }

    fn coupled() -> LmiProblem {
        // AᵀPA − P ≺ 0 with a 2×2 stable A, plus P ⪰ I.
        let mut p = LmiProblem::new(1e-7);
        let v = p.add_symmetric("P", 2, None);
        let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, -0.3, 0.7]);
        let mut e = AffineMatrixExpr::new(2);
        e.add_term(0, 0, &a.transpose(), p.var(v), &a, 1.0);
        e.add_var(0, 0, p.var(v), -1.0);
        p.add_constraint("stein", e, Sense::NegativeDefinite);
        let mut lo = AffineMatrixExpr::new(2);
        lo.add_var(0, 0, p.var(v), 1.0);
        lo.add_const(0, 0, &-DMatrix::<f64>::identity(2, 2));
        p.add_constraint("lower", lo, Sense::PositiveSemidefinite);
        p
    }

    #[test]
    fn deterministic_and_scale_robust() {
        let s = SolverSettings::default();
        let p = coupled();
        let a = solve_feasibility(&p, &s).unwrap();
        let b = solve_feasibility(&p, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, SolveStatus::Feasible);
        let mut scaled = p.clone();
        for c in scaled.constraints.iter_mut() {
            c.expr.scale(10.0);
        }
        assert_eq!(solve_feasibility(&scaled, &s).unwrap().status, SolveStatus::Feasible);
        let unstable = {
            let mut q = p.clone();
            q.constraints[0].expr.scale(-1.0);
            q
        };
        // PᵀP − AᵀPA ≺ 0 with P ≻ 0 has no solution for a Schur-stable A.
        assert_eq!(solve_feasibility(&unstable, &s).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn reported_solution_replays_independently() {
        let p = coupled();
        let out = solve_feasibility(&p, &SolverSettings::default()).unwrap();
        let pm = out.assignment.matrix(&p, crate::lmi::VarId(0));
        let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, -0.3, 0.7]);
        let stein = a.transpose() * &pm * &a - &pm;
        assert!(crate::linalg::lambda_max(&stein) < -1e-7);
        assert!(lambda_min(&pm) >= 1.0 - 1e-9);
    }

    #[test]
    fn minimization_objective_matches_known_optimum() {
        // min tr P subject to AᵀPA − P ⪯ −I has optimum tr of the Stein solution.
        let mut p = LmiProblem::new(0.0);
        let v = p.add_symmetric("P", 2, None);
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3]);
        let mut e = AffineMatrixExpr::new(2);
        e.add_term(0, 0, &a.transpose(), p.var(v), &a, 1.0);
        e.add_var(0, 0, p.var(v), -1.0);
        e.add_const(0, 0, &DMatrix::identity(2, 2));
        p.add_constraint("stein", e, Sense::NegativeDefinite);
        let mut obj = LinearObjective::default();
        obj.add_trace_product(p.var(v), &DMatrix::identity(2, 2));
        let out = minimize_linear(&p, &obj, &SolverSettings::default()).unwrap();
        // P* = Σ (Aᵀ)^k A^k
        let mut pstar = DMatrix::<f64>::zeros(2, 2);
        let mut ak = DMatrix::<f64>::identity(2, 2);
        for _ in 0..200 {
            pstar += ak.transpose() * &ak;
            ak = &ak * &a;
        }
        assert!((out.objective.unwrap() - pstar.trace()).abs() < 1e-6, "{:?} {}", out.objective, pstar.trace());
    }
}
