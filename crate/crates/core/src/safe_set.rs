//! Convex safe set over stored extended states, its terminal-cost LP and the
//! convex-combination safe policy.

use nalgebra::{DMatrix, DVector};

use crate::behavior::{constant_extended_state, extended_state};
use crate::error::{Error, Result};
use crate::lin_plant::Trajectory;
use crate::optim::{solve_qp, QpStatus, QuadraticProgram, SparseMat};
use crate::robust::BoxSet;
use crate::Layout;

/// `h(u, y) = |u - u^F|_R^2 + |y - y^F|_Q^2`
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u_target: DVector<f64>,
    pub y_target: DVector<f64>,
}

impl StageCost {
    pub fn eval(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let du = u - &self.u_target;
        let dy = y - &self.y_target;
        du.dot(&(&self.r * &du)) + dy.dot(&(&self.q * &dy))
    }
}

/// `sum_{k=t}^{T-1} h(u_k, y_k)`; 0 at `t = T`.
pub fn cost_to_go(traj: &Trajectory, t: usize, cost: &StageCost) -> f64 {
    (t..traj.len())
        .map(|k| cost.eval(&traj.inputs[k + traj.ell], &traj.outputs[k + traj.ell]))
        .sum()
}

/// Which controller family produced a stored trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Nominal,
    Tube,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub xi: DVector<f64>,
    pub cost_to_go: f64,
    /// Input applied at this sample; `u^F` for the terminal sample.
    pub input: DVector<f64>,
    pub iteration: usize,
    pub time: usize,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    pub layout: Layout,
    pub target: DVector<f64>,
    pub u_target: DVector<f64>,
    /// Half-width of the band replacing the hull equality in the LP.
    pub membership_tol: f64,
    samples: Vec<Sample>,
}

/// Acceptance rules for a trajectory entering the set.
#[derive(Debug, Clone, PartialEq)]
pub struct Admission<'a> {
    pub input_box: &'a BoxSet,
    pub output_box: &'a BoxSet,
    pub box_tol: f64,
    pub terminal_tol: f64,
}

impl SafeSet {
    pub fn new(layout: Layout, u_target: &DVector<f64>, y_target: &DVector<f64>) -> Self {
        SafeSet {
            layout,
            target: constant_extended_state(layout, u_target, y_target),
            u_target: u_target.clone(),
            membership_tol: 1e-7,
            samples: Vec::new(),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Append the `T + 1` samples of a safe trajectory. The terminal sample is
    /// stored as the exact target once it is within `terminal_tol`.
    pub fn add_trajectory(&mut self, traj: &Trajectory, cost: &StageCost, iteration: usize, branch: Branch, adm: &Admission) -> Result<()> {
        let big_t = traj.len();
        for k in 0..big_t {
            let u = &traj.inputs[k + traj.ell];
            let y = &traj.outputs[k + traj.ell];
            if let Some(i) = adm.input_box.first_violation(u, adm.box_tol) {
                return Err(Error::UnsafeTrajectory(format!(
                    "input {i} = {} outside [{}, {}] at t={k}",
                    u[i], adm.input_box.lower[i], adm.input_box.upper[i]
                )));
            }
            if let Some(i) = adm.output_box.first_violation(y, adm.box_tol) {
                return Err(Error::UnsafeTrajectory(format!(
                    "output {i} = {} outside [{}, {}] at t={k}",
                    y[i], adm.output_box.lower[i], adm.output_box.upper[i]
                )));
            }
        }
        let terminal = extended_state(traj, big_t)?;
        let gap = (&terminal - &self.target).amax();
        if gap > adm.terminal_tol {
            return Err(Error::UnsafeTrajectory(format!(
                "terminal extended state is {gap:e} from the target"
            )));
        }
        let mut tail = 0.0;
        let mut rows = Vec::with_capacity(big_t + 1);
        rows.push(Sample {
            xi: self.target.clone(),
            cost_to_go: 0.0,
            input: self.u_target.clone(),
            iteration,
            time: big_t,
            branch,
        });
        for k in (0..big_t).rev() {
            let u = &traj.inputs[k + traj.ell];
            tail += cost.eval(u, &traj.outputs[k + traj.ell]);
            rows.push(Sample {
                xi: extended_state(traj, k)?,
                cost_to_go: tail,
                input: u.clone(),
                iteration,
                time: k,
                branch,
            });
        }
        rows.reverse();
        self.samples.extend(rows);
        Ok(())
    }

    /// Snapshot holding only the samples accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&Sample) -> bool) -> SafeSet {
        SafeSet {
            layout: self.layout,
            target: self.target.clone(),
            u_target: self.u_target.clone(),
            membership_tol: self.membership_tol,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Sample extended states as columns.
    pub fn state_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.layout.n_xi(), self.samples.len());
        for (c, s) in self.samples.iter().enumerate() {
            m.set_column(c, &s.xi);
        }
        m
    }

    pub fn costs(&self) -> DVector<f64> {
        DVector::from_iterator(self.samples.len(), self.samples.iter().map(|s| s.cost_to_go))
    }

    /// Cheapest convex combination of samples reproducing `xi`.
    pub fn terminal_cost(&self, xi: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("safe set is empty".into()));
        }
        let k = self.samples.len();
        let nx = self.layout.n_xi();
        let mut qp = QuadraticProgram::new(k);
        qp.lin_cost = self.costs();
        qp.lower = DVector::zeros(k);
        let mut eq = SparseMat::zeros(1, k);
        for c in 0..k {
            eq.push(0, c, 1.0);
        }
        qp.eq_lhs = eq;
        qp.eq_rhs = DVector::from_element(1, 1.0);
        let states = self.state_matrix();
        let mut ineq = SparseMat::zeros(2 * nx, k);
        ineq.add_block(0, 0, &states);
        ineq.add_block(nx, 0, &(-&states));
        qp.ineq_lhs = ineq;
        let tol = self.membership_tol;
        qp.ineq_rhs = DVector::from_fn(2 * nx, |i, _| if i < nx { xi[i] + tol } else { -xi[i - nx] + tol });
        let sol = solve_qp(&qp)?;
        match sol.status {
            QpStatus::Optimal => {
                let gamma = sol.x.map(|g| g.max(0.0));
                Ok((self.costs().dot(&gamma), gamma))
            }
            QpStatus::Infeasible => Err(Error::OutsideSafeSet),
            QpStatus::NumericalFailure => Err(Error::Numerical(format!("terminal cost LP: {}", sol.message))),
        }
    }

    /// `pi = sum gamma_i u_i`
    pub fn safe_policy(&self, gamma: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.layout.m);
        for (g, s) in gamma.iter().zip(&self.samples) {
            u += &s.input * *g;
        }
        u
    }
}
