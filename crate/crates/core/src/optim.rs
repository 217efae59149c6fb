//! Convex QP/LP interface.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    1/2 x' P x + q' x
//! subject to  A_eq x = b_eq
//!             A_in x <= b_in
//!             lower <= x <= upper
//! ```
//!
//! and solved with an interior-point method. The solver is deterministic:
//! identical inputs give bit-identical outputs.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sparse matrix in triplet form. Duplicate entries are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMat {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMat {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut s = SparseMat::zeros(m.nrows(), m.ncols());
        s.add_block(0, 0, m);
        s
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    /// Add a dense block with its top-left corner at `(r0, c0)`.
    pub fn add_block(&mut self, r0: usize, c0: usize, m: &DMatrix<f64>) {
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                self.push(r0 + r, c0 + c, m[(r, c)]);
            }
        }
    }

    fn consolidated(&self) -> BTreeMap<(usize, usize), f64> {
        let mut map = BTreeMap::new();
        for &(r, c, v) in &self.entries {
            *map.entry((r, c)).or_insert(0.0) += v;
        }
        map
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub num_vars: usize,
    pub quad_cost: SparseMat,
    pub lin_cost: DVector<f64>,
    pub eq_lhs: SparseMat,
    pub eq_rhs: DVector<f64>,
    pub ineq_lhs: SparseMat,
    pub ineq_rhs: DVector<f64>,
    /// Per-variable bounds; infinite entries are dropped.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem with zero cost over `n` variables.
    pub fn new(n: usize) -> Self {
        QuadraticProgram {
            num_vars: n,
            quad_cost: SparseMat::zeros(n, n),
            lin_cost: DVector::zeros(n),
            eq_lhs: SparseMat::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_lhs: SparseMat::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.quad_cost.mul_vec(x)) + self.lin_cost.dot(x)
    }

    /// Largest equality residual, inequality violation and bound violation.
    pub fn violation(&self, x: &DVector<f64>) -> (f64, f64) {
        let eq = (self.eq_lhs.mul_vec(x) - &self.eq_rhs).amax();
        let mut ineq: f64 = 0.0;
        let ax = self.ineq_lhs.mul_vec(x);
        for i in 0..ax.len() {
            ineq = ineq.max(ax[i] - self.ineq_rhs[i]);
        }
        for i in 0..self.num_vars {
            ineq = ineq.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        (if eq.is_finite() { eq } else { f64::INFINITY }, ineq)
    }

    fn check_dims(&self) -> Result<()> {
        let n = self.num_vars;
        let dim = |context, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected,
                    got,
                })
            }
        };
        if n == 0 {
            return Err(Error::InvalidArgument("num_vars must be positive".into()));
        }
        dim("quad_cost rows", n, self.quad_cost.nrows)?;
        dim("quad_cost cols", n, self.quad_cost.ncols)?;
        dim("lin_cost", n, self.lin_cost.len())?;
        dim("eq_lhs cols", n, self.eq_lhs.ncols)?;
        dim("eq_rhs", self.eq_lhs.nrows, self.eq_rhs.len())?;
        dim("ineq_lhs cols", n, self.ineq_lhs.ncols)?;
        dim("ineq_rhs", self.ineq_lhs.nrows, self.ineq_rhs.len())?;
        dim("lower", n, self.lower.len())?;
        dim("upper", n, self.upper.len())?;
        for m in [&self.quad_cost, &self.eq_lhs, &self.ineq_lhs] {
            if let Some(&(r, c, _)) = m.entries.iter().find(|e| e.0 >= m.nrows || e.1 >= m.ncols) {
                return Err(Error::InvalidArgument(format!("entry ({r}, {c}) out of bounds")));
            }
        }
        Ok(())
    }

    fn check_symmetric(&self) -> Result<()> {
        let map = self.quad_cost.consolidated();
        for (&(r, c), &v) in &map {
            let w = map.get(&(c, r)).copied().unwrap_or(0.0);
            if (v - w).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "quad_cost not symmetric at ({r}, {c})"
                )));
            }
        }
        Ok(())
    }

    /// Full invariant check including positive semidefiniteness. This is an
    /// O(n^3) eigenvalue computation; `solve_qp` only checks dimensions and
    /// symmetry.
    pub fn validate(&self) -> Result<()> {
        self.check_dims()?;
        self.check_symmetric()?;
        let p = self.quad_cost.to_dense();
        let min_eig = p.symmetric_eigenvalues().min();
        if min_eig < -1e-9 {
            return Err(Error::InvalidArgument(format!(
                "quad_cost not PSD: min eigenvalue {min_eig:e}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub eq_residual: f64,
    pub ineq_violation: f64,
    pub message: String,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// Turn a non-optimal status into an error carrying the diagnostics.
    pub fn into_result(self, what: &str) -> Result<QpSolution> {
        match self.status {
            QpStatus::Optimal => Ok(self),
            QpStatus::Infeasible => Err(Error::Infeasible(format!("{what}: {}", self.message))),
            QpStatus::NumericalFailure => {
                Err(Error::Numerical(format!("{what}: {}", self.message)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    /// Primal residual accepted on return before downgrading to failure.
    pub accept_residual: f64,
    /// Ruiz scaling of the problem data inside the solver.
    pub equilibrate: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            tol_feas: 1e-8,
            max_iter: 200,
            accept_residual: 1e-6,
            equilibrate: false,
        }
    }
}

pub fn solve_qp(p: &QuadraticProgram) -> Result<QpSolution> {
    solve_qp_with(p, &SolverSettings::default())
}

pub fn solve_qp_with(p: &QuadraticProgram, settings: &SolverSettings) -> Result<QpSolution> {
    p.check_dims()?;
    p.check_symmetric()?;
    let n = p.num_vars;

    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (&(r, c), &v) in &p.quad_cost.consolidated() {
        if r <= c && v != 0.0 {
            pi.push(r);
            pj.push(c);
            pv.push(v);
        }
    }
    let pmat = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut row = 0;
    for (&(r, c), &v) in &p.eq_lhs.consolidated() {
        ai.push(r);
        aj.push(c);
        av.push(v);
    }
    b.extend(p.eq_rhs.iter().copied());
    row += p.eq_lhs.nrows;
    let n_eq = row;
    for (&(r, c), &v) in &p.ineq_lhs.consolidated() {
        ai.push(row + r);
        aj.push(c);
        av.push(v);
    }
    b.extend(p.ineq_rhs.iter().copied());
    row += p.ineq_lhs.nrows;
    for i in 0..n {
        if p.upper[i].is_finite() {
            ai.push(row);
            aj.push(i);
            av.push(1.0);
            b.push(p.upper[i]);
            row += 1;
        }
        if p.lower[i].is_finite() {
            ai.push(row);
            aj.push(i);
            av.push(-1.0);
            b.push(-p.lower[i]);
            row += 1;
        }
    }
    for (i, (&lo, &hi)) in p.lower.iter().zip(p.upper.iter()).enumerate() {
        if lo > hi {
            return Ok(QpSolution {
                status: QpStatus::Infeasible,
                x: DVector::zeros(n),
                objective: f64::NAN,
                iterations: 0,
                eq_residual: f64::NAN,
                ineq_violation: lo - hi,
                message: format!("empty bounds on variable {i}"),
            });
        }
    }
    let amat = CscMatrix::new_from_triplets(row, n, ai, aj, av);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if row > n_eq {
        cones.push(NonnegativeConeT(row - n_eq));
    }

    let cs = DefaultSettings::<f64> {
        verbose: false,
        tol_gap_abs: settings.tol_gap_abs,
        tol_gap_rel: settings.tol_gap_rel,
        tol_feas: settings.tol_feas,
        max_iter: settings.max_iter,
        equilibrate_enable: settings.equilibrate,
        ..DefaultSettings::default()
    };
    let q: Vec<f64> = p.lin_cost.iter().copied().collect();
    let mut solver = DefaultSolver::new(&pmat, &q, &amat, &b, &cones, cs)
        .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
    solver.solve();

    let sol = &solver.solution;
    let x = DVector::from_column_slice(&sol.x);
    let (eq_residual, ineq_violation) = p.violation(&x);
    let objective = p.objective(&x);
    let mut status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => QpStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            QpStatus::Infeasible
        }
        _ => QpStatus::NumericalFailure,
    };
    let mut message = format!("{:?} after {} iterations", sol.status, sol.iterations);
    if status == QpStatus::Optimal
        && !(eq_residual <= settings.accept_residual && ineq_violation <= settings.accept_residual)
    {
        status = QpStatus::NumericalFailure;
        message = format!(
            "{message}; residuals eq {eq_residual:e}, ineq {ineq_violation:e} above {:e}",
            settings.accept_residual
        );
    }
    Ok(QpSolution {
        status,
        x,
        objective,
        iterations: sol.iterations,
        eq_residual,
        ineq_violation,
        message,
    })
}
