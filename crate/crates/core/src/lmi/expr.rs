use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::sym_eig_range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric(usize),
    Matrix(usize, usize),
    Scalar,
}

impl VarKind {
    pub fn scalars(&self) -> usize {
        match *self {
            VarKind::Symmetric(s) => s * (s + 1) / 2,
            VarKind::Matrix(r, c) => r * c,
            VarKind::Scalar => 1,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(s) => (s, s),
            VarKind::Matrix(r, c) => (r, c),
            VarKind::Scalar => (1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVar {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
    /// `V ⪰ lower·I` (or `v ≥ lower`) when set.
    pub lower_bound: Option<f64>,
}

impl DecisionVar {
    /// Basis entries `(row, col)` of the `s`-th scalar; symmetric off-diagonal
    /// scalars contribute to both mirrored positions.
    fn basis(&self, s: usize) -> [(usize, usize); 2] {
        match self.kind {
            VarKind::Symmetric(n) => {
                let (i, j) = sym_index(n, s);
                [(i, j), (j, i)]
            }
            VarKind::Matrix(_, c) => {
                let e = (s / c, s % c);
                [e, e]
            }
            VarKind::Scalar => [(0, 0), (0, 0)],
        }
    }

    fn basis_is_pair(&self, s: usize) -> bool {
        let [a, b] = self.basis(s);
        matches!(self.kind, VarKind::Symmetric(_)) && a != b
    }

    pub fn value(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let (r, c) = self.kind.shape();
        let mut out = DMatrix::zeros(r, c);
        for s in 0..self.kind.scalars() {
            let v = y[self.offset + s];
            let [a, b] = self.basis(s);
            out[a] = v;
            out[b] = v;
        }
        out
    }

    pub fn scalar_value(&self, y: &DVector<f64>) -> f64 {
        y[self.offset]
    }
}

/// Row-major upper-triangle enumeration of an `n×n` symmetric matrix.
fn sym_index(n: usize, s: usize) -> (usize, usize) {
    let mut i = 0;
    let mut rem = s;
    while rem >= n - i {
        rem -= n - i;
        i += 1;
    }
    (i, i + rem)
}

/// Sparse upper-triangle storage keyed by `(row, col)` with `row <= col`.
pub type UpperEntries = BTreeMap<(usize, usize), f64>;

/// A symmetric matrix affine in the problem's scalar unknowns.
///
/// Only the upper triangle is stored, so every evaluation is exactly symmetric.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineMatrixExpr {
    pub dim: usize,
    pub constant: UpperEntries,
    pub terms: BTreeMap<usize, UpperEntries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Diagonal,
    OffDiagonal,
}

impl AffineMatrixExpr {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    fn placement(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Placement {
        assert!(r0 + rows <= self.dim && c0 + cols <= self.dim, "placement out of bounds");
        if r0 == c0 && rows == cols {
            Placement::Diagonal
        } else {
            let disjoint = r0 + rows <= c0 || c0 + cols <= r0;
            assert!(disjoint, "placement straddles the diagonal");
            Placement::OffDiagonal
        }
    }

    fn accumulate(map: &mut UpperEntries, place: Placement, r: usize, c: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        let key = (r.min(c), r.max(c));
        let add = match place {
            Placement::Diagonal if r != c => 0.5 * v,
            _ => v,
        };
        *map.entry(key).or_insert(0.0) += add;
    }

    /// Adds `m` at `(r0, c0)`. Diagonal blocks are symmetrized; off-diagonal
    /// blocks imply their transpose.
    pub fn add_const(&mut self, r0: usize, c0: usize, m: &DMatrix<f64>) {
        let place = self.placement(r0, c0, m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                Self::accumulate(&mut self.constant, place, r0 + i, c0 + j, m[(i, j)]);
            }
        }
    }

    /// Adds `coef · left · V · right` at `(r0, c0)`.
    pub fn add_term(
        &mut self,
        r0: usize,
        c0: usize,
        left: &DMatrix<f64>,
        var: &DecisionVar,
        right: &DMatrix<f64>,
        coef: f64,
    ) {
        let (vr, vc) = var.kind.shape();
        assert_eq!(left.ncols(), vr, "left multiplier does not match {}", var.name);
        assert_eq!(right.nrows(), vc, "right multiplier does not match {}", var.name);
        let place = self.placement(r0, c0, left.nrows(), right.ncols());
        for s in 0..var.kind.scalars() {
            let [first, second] = var.basis(s);
            let pairs: &[(usize, usize)] = if var.basis_is_pair(s) { &[first, second] } else { &[first] };
            let map = self.terms.entry(var.offset + s).or_default();
            for &(a, b) in pairs {
                for i in 0..left.nrows() {
                    let l = left[(i, a)];
                    if l == 0.0 {
                        continue;
                    }
                    for j in 0..right.ncols() {
                        let rv = right[(b, j)];
                        if rv != 0.0 {
                            Self::accumulate(map, place, r0 + i, c0 + j, coef * l * rv);
                        }
                    }
                }
            }
        }
    }

    /// Adds `coef · V` for a square variable at `(r0, c0)`.
    pub fn add_var(&mut self, r0: usize, c0: usize, var: &DecisionVar, coef: f64) {
        let (r, c) = var.kind.shape();
        self.add_term(r0, c0, &DMatrix::identity(r, r), var, &DMatrix::identity(c, c), coef);
    }

    /// Adds `v · m` for a scalar variable `v` at `(r0, c0)`.
    pub fn add_scaled(&mut self, r0: usize, c0: usize, var: &DecisionVar, m: &DMatrix<f64>) {
        assert_eq!(var.kind, VarKind::Scalar);
        let place = self.placement(r0, c0, m.nrows(), m.ncols());
        let map = self.terms.entry(var.offset).or_default();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                Self::accumulate(map, place, r0 + i, c0 + j, m[(i, j)]);
            }
        }
    }

    fn dense(&self, entries: &UpperEntries) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (&(i, j), &v) in entries {
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
        out
    }

    pub fn constant_matrix(&self) -> DMatrix<f64> {
        self.dense(&self.constant)
    }

    pub fn coefficient_matrix(&self, scalar: usize) -> DMatrix<f64> {
        self.terms.get(&scalar).map_or_else(|| DMatrix::zeros(self.dim, self.dim), |e| self.dense(e))
    }

    pub fn evaluate(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        let mut put = |i: usize, j: usize, v: f64| {
            out[(i, j)] += v;
            if i != j {
                out[(j, i)] += v;
            }
        };
        for (&(i, j), &v) in &self.constant {
            put(i, j, v);
        }
        for (&s, entries) in &self.terms {
            let ys = y[s];
            if ys == 0.0 {
                continue;
            }
            for (&(i, j), &v) in entries {
                put(i, j, ys * v);
            }
        }
        out
    }

    /// Structural nonzero pattern over the constant and every term.
    pub fn pattern(&self) -> Vec<Vec<bool>> {
        let mut p = vec![vec![false; self.dim]; self.dim];
        let mut mark = |e: &UpperEntries| {
            for (&(i, j), &v) in e {
                if v != 0.0 {
                    p[i][j] = true;
                    p[j][i] = true;
                }
            }
        };
        mark(&self.constant);
        for e in self.terms.values() {
            mark(e);
        }
        p
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.constant.values_mut() {
            *v *= factor;
        }
        for e in self.terms.values_mut() {
            for v in e.values_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `F ⪯ −εI`
    NegativeDefinite,
    /// `F ⪰ εI`
    PositiveDefinite,
    /// `F ⪰ 0`
    PositiveSemidefinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineMatrixExpr,
    pub sense: Sense,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error("duplicate variable name {0}")]
    DuplicateName(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("transition row {row} has unknown entries; the fully known assembly needs a complete matrix")]
    RequiresFullTP { row: usize },
    #[error("gamma must be positive, got {0}")]
    BadGamma(f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearObjective {
    pub coeffs: BTreeMap<usize, f64>,
}

impl LinearObjective {
    pub fn add_scalar(&mut self, var: &DecisionVar, c: f64) {
        assert_eq!(var.kind, VarKind::Scalar);
        *self.coeffs.entry(var.offset).or_insert(0.0) += c;
    }

    /// Adds `tr(A·V)` for a symmetric variable `V`.
    pub fn add_trace_product(&mut self, var: &DecisionVar, a: &DMatrix<f64>) {
        let VarKind::Symmetric(n) = var.kind else { panic!("trace product needs a symmetric variable") };
        assert_eq!(a.shape(), (n, n));
        for s in 0..var.kind.scalars() {
            let (i, j) = sym_index(n, s);
            let c = if i == j { a[(i, i)] } else { a[(i, j)] + a[(j, i)] };
            if c != 0.0 {
                *self.coeffs.entry(var.offset + s).or_insert(0.0) += c;
            }
        }
    }

    pub fn evaluate(&self, y: &DVector<f64>) -> f64 {
        self.coeffs.iter().map(|(&s, &c)| c * y[s]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmiProblem {
    pub vars: Vec<DecisionVar>,
    pub n_scalars: usize,
    pub constraints: Vec<LmiConstraint>,
    /// `(P, X)` pairs expected to satisfy `P·X = I`.
    pub couplings: Vec<(VarId, VarId)>,
    pub eps: f64,
}

impl LmiProblem {
    pub fn new(eps: f64) -> Self {
        Self { eps, ..Default::default() }
    }

    fn push(&mut self, name: &str, kind: VarKind, lower_bound: Option<f64>) -> VarId {
        assert!(
            !self.vars.iter().any(|v| v.name == name),
            "{}",
            LmiError::DuplicateName(name.to_string())
        );
        let id = VarId(self.vars.len());
        self.vars.push(DecisionVar { name: name.to_string(), kind, offset: self.n_scalars, lower_bound });
        self.n_scalars += kind.scalars();
        id
    }

    pub fn add_symmetric(&mut self, name: &str, size: usize, lower_bound: Option<f64>) -> VarId {
        self.push(name, VarKind::Symmetric(size), lower_bound)
    }

    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.push(name, VarKind::Matrix(rows, cols), None)
    }

    pub fn add_scalar(&mut self, name: &str, lower_bound: Option<f64>) -> VarId {
        self.push(name, VarKind::Scalar, lower_bound)
    }

    pub fn var(&self, id: VarId) -> &DecisionVar {
        &self.vars[id.0]
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, expr: AffineMatrixExpr, sense: Sense) {
        self.constraints.push(LmiConstraint { name: name.into(), expr, sense });
    }

    pub fn value(&self, y: &DVector<f64>, id: VarId) -> DMatrix<f64> {
        self.var(id).value(y)
    }

    pub fn scalar(&self, y: &DVector<f64>, id: VarId) -> f64 {
        self.var(id).scalar_value(y)
    }

    /// Violation of one constraint at `y`; non-positive when satisfied.
    pub fn constraint_violation(&self, c: &LmiConstraint, y: &DVector<f64>) -> f64 {
        let (lo, hi) = sym_eig_range(&c.expr.evaluate(y));
        match c.sense {
            Sense::NegativeDefinite => hi + self.eps,
            Sense::PositiveDefinite => self.eps - lo,
            Sense::PositiveSemidefinite => -lo,
        }
    }

    /// Worst violation over constraints and variable lower bounds, computed by
    /// dense eigenvalue evaluation.
    pub fn residual(&self, y: &DVector<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for c in &self.constraints {
            worst = worst.max(self.constraint_violation(c, y));
        }
        for v in &self.vars {
            if let Some(lb) = v.lower_bound {
                let val = v.value(y);
                worst = worst.max(lb - sym_eig_range(&val).0);
            }
        }
        worst
    }

    /// Variable list and per-constraint sparsity pattern.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "eps {:e}", self.eps);
        let _ = writeln!(s, "variables {} ({} scalars)", self.vars.len(), self.n_scalars);
        for v in &self.vars {
            let kind = match v.kind {
                VarKind::Symmetric(n) => format!("sym {n}x{n}"),
                VarKind::Matrix(r, c) => format!("mat {r}x{c}"),
                VarKind::Scalar => "scalar".to_string(),
            };
            let lb = v.lower_bound.map_or(String::new(), |b| format!(" >= {b:e}"));
            let _ = writeln!(s, "  {} : {} @{}{}", v.name, kind, v.offset, lb);
        }
        for (pi, pj) in &self.couplings {
            let _ = writeln!(s, "coupling {} * {} = I", self.var(*pi).name, self.var(*pj).name);
        }
        for c in &self.constraints {
            let sense = match c.sense {
                Sense::NegativeDefinite => "<= -eps I",
                Sense::PositiveDefinite => ">= eps I",
                Sense::PositiveSemidefinite => ">= 0",
            };
            let _ = writeln!(s, "constraint {} : {}x{} {} ({} scalars)", c.name, c.expr.dim, c.expr.dim, sense, c.expr.terms.len());
            for row in c.expr.pattern() {
                let line: String = row.iter().map(|&b| if b { 'x' } else { '.' }).collect();
                let _ = writeln!(s, "  {line}");
            }
        }
        s
    }
}

/// Values of every scalar unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub y: DVector<f64>,
}

impl Assignment {
    pub fn zeros(n: usize) -> Self {
        Self { y: DVector::zeros(n) }
    }

    pub fn matrix(&self, problem: &LmiProblem, id: VarId) -> DMatrix<f64> {
        problem.value(&self.y, id)
    }

    pub fn scalar(&self, problem: &LmiProblem, id: VarId) -> f64 {
        problem.scalar(&self.y, id)
    }
}
