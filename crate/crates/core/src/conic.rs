//! Second-order cone programs over a real decision vector.
//!
//! Problems are written with [`AffineExpr`] rows and handed to an
//! interior-point backend (Clarabel). Complex unknowns are stored as
//! interleaved `(re, im)` pairs; [`complex_affine`] and [`real_inner`] build
//! the matching real rows.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};

pub const DEFAULT_TOL: f64 = 1e-7;

/// `sum_i coef_i x[var_i] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn plus(mut self, var: usize, coef: f64) -> Self {
        self.terms.push((var, coef));
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

/// `||vector|| <= scalar`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub scalar: AffineExpr,
    pub vector: Vec<AffineExpr>,
}

impl SocConstraint {
    /// `scalar - ||vector||`; nonnegative when satisfied.
    pub fn slack(&self, x: &[f64]) -> f64 {
        let n = self.vector.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
        self.scalar.eval(x) - n
    }
}

/// Minimize `objective . x + objective_constant` subject to
/// `equalities == 0`, `nonnegatives >= 0` and the cone constraints.
#[derive(Debug, Clone, Default)]
pub struct SocpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub equalities: Vec<AffineExpr>,
    pub nonnegatives: Vec<AffineExpr>,
    pub cones: Vec<SocConstraint>,
}

impl SocpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            ..Default::default()
        }
    }

    /// `lo <= x[var] <= hi`; either side may be infinite.
    pub fn add_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        if lo.is_finite() {
            self.nonnegatives.push(AffineExpr::var(var).offset(-lo));
        }
        if hi.is_finite() {
            self.nonnegatives.push(AffineExpr::constant(hi).plus(var, -1.0));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::Solver("objective length differs from variable count".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) || !self.objective_constant.is_finite() {
            return Err(Error::Solver("objective is not finite".into()));
        }
        let rows = self
            .equalities
            .iter()
            .chain(&self.nonnegatives)
            .chain(self.cones.iter().flat_map(|c| std::iter::once(&c.scalar).chain(&c.vector)));
        for e in rows {
            if e.max_var().is_some_and(|v| v >= self.num_vars) {
                return Err(Error::Solver("constraint refers to a missing variable".into()));
            }
            if !e.constant.is_finite() || e.terms.iter().any(|t| !t.1.is_finite()) {
                return Err(Error::Solver("constraint data is not finite".into()));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest violation over all constraints at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|e| e.eval(x).abs());
        let nn = self.nonnegatives.iter().map(|e| (-e.eval(x)).max(0.0));
        let soc = self.cones.iter().map(|c| (-c.slack(x)).max(0.0));
        eq.chain(nn).chain(soc).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIters,
    /// The backend stalled or hit a numerical failure; `x` is its last iterate.
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SocpSolution {
    pub x: Vec<f64>,
    pub status: SocpStatus,
    pub objective: f64,
    /// Dual objective when the backend reports one.
    pub dual_objective: Option<f64>,
    /// Solved only to the backend's reduced accuracy thresholds.
    pub reduced_accuracy: bool,
    pub iterations: u32,
}

/// Solves `p` to relative optimality `tol`.
pub fn solve_socp(p: &SocpProblem, tol: f64) -> Result<SocpSolution> {
    p.validate()?;
    let n = p.num_vars;
    let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    // Clarabel form: A x + s = b with s in the cone, so a row e(x) = a.x + c
    // becomes A-row -a and b-entry c
    let mut push_row = |e: &AffineExpr| {
        let r = b.len();
        for &(j, c) in &e.terms {
            if c != 0.0 {
                ri.push(r);
                ci.push(j);
                vals.push(-c);
            }
        }
        b.push(e.constant);
    };
    let mut cones = Vec::new();
    if !p.equalities.is_empty() {
        p.equalities.iter().for_each(&mut push_row);
        cones.push(SupportedConeT::ZeroConeT(p.equalities.len()));
    }
    if !p.nonnegatives.is_empty() {
        p.nonnegatives.iter().for_each(&mut push_row);
        cones.push(SupportedConeT::NonnegativeConeT(p.nonnegatives.len()));
    }
    for c in &p.cones {
        push_row(&c.scalar);
        c.vector.iter().for_each(&mut push_row);
        cones.push(SupportedConeT::SecondOrderConeT(1 + c.vector.len()));
    }
    let m = b.len();
    let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
    let pmat = CscMatrix::zeros((n, n));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_feas(tol.min(1e-8))
        .max_iter(200)
        .build()
        .map_err(|e| Error::Solver(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&pmat, &p.objective, &a, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("solver setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    let (status, reduced) = match sol.status {
        SolverStatus::Solved => (SocpStatus::Optimal, false),
        SolverStatus::AlmostSolved => (SocpStatus::Optimal, true),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => (SocpStatus::Infeasible, false),
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => (SocpStatus::Unbounded, false),
        SolverStatus::MaxIterations | SolverStatus::MaxTime => (SocpStatus::MaxIters, false),
        _ => (SocpStatus::NumericalFailure, false),
    };
    let x = sol.x.clone();
    let objective = p.objective_value(&x);
    let dual_objective = (status == SocpStatus::Optimal).then_some(sol.obj_val_dual + p.objective_constant);
    Ok(SocpSolution {
        objective,
        x,
        status,
        dual_objective,
        reduced_accuracy: reduced,
        iterations: sol.iterations,
    })
}

/// Real and imaginary variable indices of complex unknown `i` in a block
/// starting at `offset`.
#[inline]
pub fn complex_index(offset: usize, i: usize) -> (usize, usize) {
    (offset + 2 * i, offset + 2 * i + 1)
}

/// Interleaves a complex vector into `(re, im)` pairs.
pub fn lift(z: &CVec) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Inverse of [`lift`] for the block of `len` complex unknowns at `offset`.
pub fn unlift(x: &[f64], offset: usize, len: usize) -> CVec {
    CVec::from_fn(len, |i, _| C64::new(x[offset + 2 * i], x[offset + 2 * i + 1]))
}

/// Real rows `[re y_0, im y_0, re y_1, ...]` of `y = m z + c`, where `z` is
/// the complex block at `offset`.
pub fn complex_affine(m: &CMat, offset: usize, c: &CVec) -> Vec<AffineExpr> {
    assert_eq!(m.nrows(), c.len(), "affine map and constant disagree in length");
    let mut rows = Vec::with_capacity(2 * m.nrows());
    for r in 0..m.nrows() {
        let mut re = AffineExpr::constant(c[r].re);
        let mut im = AffineExpr::constant(c[r].im);
        for j in 0..m.ncols() {
            let a = m[(r, j)];
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            let (jr, ji) = complex_index(offset, j);
            re.terms.extend([(jr, a.re), (ji, -a.im)]);
            im.terms.extend([(jr, a.im), (ji, a.re)]);
        }
        rows.push(re);
        rows.push(im);
    }
    rows
}

/// `Re(a^H z)` for the complex block at `offset`.
pub fn real_inner(a: &CVec, offset: usize) -> AffineExpr {
    let mut e = AffineExpr::default();
    for (j, v) in a.iter().enumerate() {
        let (jr, ji) = complex_index(offset, j);
        e.terms.extend([(jr, v.re), (ji, v.im)]);
    }
    e
}
