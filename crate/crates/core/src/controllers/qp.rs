//! Decision-stack layout shared by the three controllers.
//!
//! The Hankel constraint `H g = col(xi, u, y)` is written as `W beta` with `W`
//! an orthonormal basis of the column space of `H`, so `beta` is unique for a
//! given plan. The initial-condition and terminal equalities are projected on
//! the span of valid extended states, which keeps the equality block full row
//! rank.

use nalgebra::{DMatrix, DVector};

use crate::behavior::HankelBlocks;
use crate::error::{Error, Result};
use crate::linalg::range_basis;
use crate::optim::{QuadraticProgram, SparseMat};
use crate::robust::BoxSet;
use crate::safe_set::{SafeSet, StageCost};
use crate::Layout;

#[derive(Debug, Clone)]
pub(crate) struct QpPlan {
    pub layout: Layout,
    pub horizon: usize,
    pub n_beta: usize,
    pub n_gamma: usize,
    pub template: QuadraticProgram,
    /// `V' ` projecting onto valid extended states.
    xi_proj: DMatrix<f64>,
    /// Terminal-row contribution of the current extended state, already
    /// moved to the right-hand side.
    term_from_xi: DMatrix<f64>,
    row_init: usize,
    row_term: usize,
    pub constant: f64,
}

/// Decoded optimizer.
#[derive(Debug, Clone)]
pub(crate) struct PlanValues {
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub gamma: DVector<f64>,
}

impl QpPlan {
    pub fn new(
        layout: Layout,
        blocks: &HankelBlocks,
        safe_set: &SafeSet,
        cost: &StageCost,
        input_box: &BoxSet,
        output_box: &BoxSet,
    ) -> Result<Self> {
        let (m, p, ell) = (layout.m, layout.p, layout.ell);
        let nx = layout.n_xi();
        let big_n = blocks.horizon;
        if blocks.t_ini != ell {
            return Err(Error::InvalidArgument("blocks must use t_ini = ell".into()));
        }
        let w = range_basis(&blocks.stacked(), blocks.rank_tol);
        let n_beta = w.ncols();
        let w_past = w.rows(0, nx).into_owned();
        let w_uf = w.rows(nx, m * big_n).into_owned();
        let w_yf = w.rows(nx + m * big_n, p * big_n).into_owned();
        let v = range_basis(&w_past, blocks.rank_tol);
        let k_xi = v.ncols();
        let xi_proj = v.transpose();

        let n_u = m * big_n;
        let n_y = p * big_n;
        let n_gamma = safe_set.len();
        if n_gamma == 0 {
            return Err(Error::InvalidArgument("safe set is empty".into()));
        }
        let off_u = n_beta;
        let off_y = off_u + n_u;
        let off_g = off_y + n_y;
        let n = off_g + n_gamma;

        // Terminal extended state: slot j of xi_N is time N - ell + j; times
        // before 0 come from the current extended state.
        let mut sel_plan = DMatrix::zeros(nx, n);
        let mut sel_xi = DMatrix::zeros(nx, nx);
        for j in 0..ell {
            let tau = big_n as i64 - ell as i64 + j as i64;
            for i in 0..m {
                let row = layout.u_offset(j) + i;
                if tau >= 0 {
                    sel_plan[(row, off_u + m * tau as usize + i)] = 1.0;
                } else {
                    sel_xi[(row, layout.u_offset((ell as i64 + tau) as usize) + i)] = 1.0;
                }
            }
            for i in 0..p {
                let row = layout.y_offset(j) + i;
                if tau >= 0 {
                    sel_plan[(row, off_y + p * tau as usize + i)] = 1.0;
                } else {
                    sel_xi[(row, layout.y_offset((ell as i64 + tau) as usize) + i)] = 1.0;
                }
            }
        }
        let states = safe_set.state_matrix();
        let mut terminal = &xi_proj * sel_plan;
        terminal
            .view_mut((0, off_g), (k_xi, n_gamma))
            .copy_from(&(-(&xi_proj * &states)));

        let row_init = 0;
        let row_u = k_xi;
        let row_y = row_u + n_u;
        let row_term = row_y + n_y;
        let row_sum = row_term + k_xi;
        let n_eq = row_sum + 1;

        let mut eq = SparseMat::zeros(n_eq, n);
        eq.add_block(row_init, 0, &(&xi_proj * &w_past));
        eq.add_block(row_u, 0, &w_uf);
        eq.add_block(row_y, 0, &w_yf);
        for i in 0..n_u {
            eq.push(row_u + i, off_u + i, -1.0);
        }
        for i in 0..n_y {
            eq.push(row_y + i, off_y + i, -1.0);
        }
        eq.add_block(row_term, 0, &terminal);
        for c in 0..n_gamma {
            eq.push(row_sum, off_g + c, 1.0);
        }
        let mut eq_rhs = DVector::zeros(n_eq);
        eq_rhs[row_sum] = 1.0;

        let mut qp = QuadraticProgram::new(n);
        let r2 = &cost.r * 2.0;
        let q2 = &cost.q * 2.0;
        let ru = &cost.r * &cost.u_target;
        let qy = &cost.q * &cost.y_target;
        for k in 0..big_n {
            qp.quad_cost.add_block(off_u + m * k, off_u + m * k, &r2);
            qp.quad_cost.add_block(off_y + p * k, off_y + p * k, &q2);
            qp.lin_cost.rows_mut(off_u + m * k, m).copy_from(&(-2.0 * &ru));
            qp.lin_cost.rows_mut(off_y + p * k, p).copy_from(&(-2.0 * &qy));
        }
        qp.lin_cost
            .rows_mut(off_g, n_gamma)
            .copy_from(&safe_set.costs());
        qp.eq_lhs = eq;
        qp.eq_rhs = eq_rhs;
        qp.lower.rows_mut(off_u, n_u).copy_from(&input_box.repeat(big_n).lower);
        qp.upper.rows_mut(off_u, n_u).copy_from(&input_box.repeat(big_n).upper);
        qp.lower.rows_mut(off_y, n_y).copy_from(&output_box.repeat(big_n).lower);
        qp.upper.rows_mut(off_y, n_y).copy_from(&output_box.repeat(big_n).upper);
        qp.lower.rows_mut(off_g, n_gamma).fill(0.0);

        let constant = big_n as f64
            * (cost.u_target.dot(&ru) + cost.y_target.dot(&qy));
        let term_from_xi = -(&xi_proj * sel_xi);
        Ok(QpPlan {
            layout,
            horizon: big_n,
            n_beta,
            n_gamma,
            template: qp,
            xi_proj,
            term_from_xi,
            row_init,
            row_term,
            constant,
        })
    }

    pub fn off_u(&self) -> usize {
        self.n_beta
    }

    pub fn off_y(&self) -> usize {
        self.n_beta + self.layout.m * self.horizon
    }

    pub fn off_gamma(&self) -> usize {
        self.off_y() + self.layout.p * self.horizon
    }

    /// Problem instance for the current (nominal) extended state.
    pub fn instantiate(&self, xi: &DVector<f64>) -> QuadraticProgram {
        let mut qp = self.template.clone();
        let k = self.xi_proj.nrows();
        qp.eq_rhs
            .rows_mut(self.row_init, k)
            .copy_from(&(&self.xi_proj * xi));
        qp.eq_rhs
            .rows_mut(self.row_term, k)
            .copy_from(&(&self.term_from_xi * xi));
        qp
    }

    pub fn decode(&self, x: &DVector<f64>) -> PlanValues {
        let (m, p) = (self.layout.m, self.layout.p);
        let u = (0..self.horizon)
            .map(|k| x.rows(self.off_u() + m * k, m).into_owned())
            .collect();
        let y = (0..self.horizon)
            .map(|k| x.rows(self.off_y() + p * k, p).into_owned())
            .collect();
        let gamma = x.rows(self.off_gamma(), self.n_gamma).map(|g| g.max(0.0));
        PlanValues { u, y, gamma }
    }
}
