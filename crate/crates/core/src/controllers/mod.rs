//! Nominal, tube and end-to-end predictive controllers, the left-kernel
//! exploration logic and the iteration loop that ties them together.

mod explore;
mod qp;
mod run;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::behavior::HankelBlocks;
use crate::error::{Error, Result};
use crate::optim::{solve_qp_with, QpStatus, SolverSettings, SparseMat};
use crate::robust::{BoxSet, RpiSet};
use crate::safe_set::{SafeSet, StageCost};
use crate::Layout;

pub use explore::{design_disturbance, excitation_needed, Probe};
pub use run::{
    run_deeprc, run_iteration, ExperimentMode, IterationOptions, IterationOutcome, IterationRecord, RankPoint,
    RunReport, RunSettings, TubeSetup,
};

use qp::{PlanValues, QpPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Nominal,
    TubeLkb,
    EndToEnd,
}

/// Feedback gain, error set and exploration parameters of the tube modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeParams {
    pub gain: DMatrix<f64>,
    pub rpi: RpiSet,
    pub disturbance: BoxSet,
    pub epsilon: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub mode: ControllerMode,
    pub nbar: usize,
    pub cost: StageCost,
    /// Tightened in the tube modes.
    pub input_box: BoxSet,
    pub output_box: BoxSet,
    pub tube: Option<TubeParams>,
    pub solver: SolverSettings,
}

/// Everything one controller needs for one iteration. Built once per
/// iteration; the QP structure is assembled here and only its right-hand
/// side changes from step to step.
#[derive(Debug, Clone)]
pub struct ControllerContext {
    spec: ControllerSpec,
    blocks: HankelBlocks,
    safe_set: SafeSet,
    plan: QpPlan,
}

/// How the applied input of a step relates to the data pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Excitation {
    /// Not an exploration step.
    None,
    /// The window leaves the image with `d = 0`.
    Natural,
    /// A nonzero disturbance was added.
    Designed,
    /// No admissible disturbance raises the rank; no column is appended.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub applied_input: DVector<f64>,
    /// `v_0` in the tube modes, `u_0` otherwise.
    pub nominal_input: DVector<f64>,
    pub nominal_output: DVector<f64>,
    pub disturbance: DVector<f64>,
    /// Optimal predicted cost without the exploration penalty.
    pub cost: f64,
    pub gamma: DVector<f64>,
    pub feasible: bool,
    pub rank_after: Option<usize>,
    pub excitation: Excitation,
    /// Whether `cost` is the optimum of the unpenalized problem.
    pub pure: bool,
}

impl ControllerContext {
    pub fn new(spec: ControllerSpec, blocks: HankelBlocks, safe_set: SafeSet) -> Result<Self> {
        blocks.check_rank()?;
        let layout = safe_set.layout;
        if blocks.t_ini != layout.ell || blocks.m != layout.m || blocks.p != layout.p {
            return Err(Error::InvalidArgument(
                "Hankel blocks do not match the safe-set layout".into(),
            ));
        }
        if spec.input_box.dim() != layout.m || spec.output_box.dim() != layout.p {
            return Err(Error::Dimension {
                context: "controller boxes",
                expected: layout.m,
                got: spec.input_box.dim(),
            });
        }
        match (&spec.mode, &spec.tube) {
            (ControllerMode::Nominal, _) => {}
            (_, None) => {
                return Err(Error::InvalidArgument("tube modes need a gain and an RPI set".into()));
            }
            (_, Some(t)) => {
                if t.gain.shape() != (layout.m, layout.n_xi()) {
                    return Err(Error::Dimension {
                        context: "tube gain columns",
                        expected: layout.n_xi(),
                        got: t.gain.ncols(),
                    });
                }
                if t.disturbance.dim() != layout.m {
                    return Err(Error::Dimension {
                        context: "disturbance box",
                        expected: layout.m,
                        got: t.disturbance.dim(),
                    });
                }
                // dbar = 0 turns exploration off
                let dbar = t.disturbance.magnitude().min();
                if t.epsilon <= 0.0 || (dbar > 0.0 && t.epsilon > dbar) {
                    return Err(Error::InvalidArgument(format!(
                        "epsilon {} must lie in (0, {dbar}]",
                        t.epsilon
                    )));
                }
                if t.lambda < 0.0 {
                    return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
                }
            }
        }
        let plan = QpPlan::new(
            layout,
            &blocks,
            &safe_set,
            &spec.cost,
            &spec.input_box,
            &spec.output_box,
        )?;
        Ok(ControllerContext {
            spec,
            blocks,
            safe_set,
            plan,
        })
    }

    pub fn mode(&self) -> ControllerMode {
        self.spec.mode
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn horizon(&self) -> usize {
        self.blocks.horizon
    }

    pub fn layout(&self) -> Layout {
        self.safe_set.layout
    }

    pub fn blocks(&self) -> &HankelBlocks {
        &self.blocks
    }

    pub fn safe_set(&self) -> &SafeSet {
        &self.safe_set
    }

    pub fn tube(&self) -> Option<&TubeParams> {
        self.spec.tube.as_ref()
    }

    fn tube_params(&self) -> Result<&TubeParams> {
        self.spec
            .tube
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("controller has no tube parameters".into()))
    }

    fn check_state(&self, xi: &DVector<f64>) -> Result<()> {
        let n = self.layout().n_xi();
        if xi.len() != n {
            return Err(Error::Dimension {
                context: "extended state",
                expected: n,
                got: xi.len(),
            });
        }
        Ok(())
    }

    /// Solve the plan from `xi`; returns the decoded optimizer and its cost.
    fn solve_plan(&self, xi: &DVector<f64>) -> Result<(PlanValues, f64)> {
        let qp = self.plan.instantiate(xi);
        let sol = solve_qp_with(&qp, &self.spec.solver)?;
        match sol.status {
            QpStatus::Optimal => {
                let cost = sol.objective + self.plan.constant;
                Ok((self.plan.decode(&sol.x), cost))
            }
            QpStatus::Infeasible => Err(Error::Infeasible(format!(
                "{:?} controller, horizon {}: {}",
                self.spec.mode, self.plan.horizon, sol.message
            ))),
            QpStatus::NumericalFailure => Err(Error::Numerical(format!(
                "{:?} controller: {}",
                self.spec.mode, sol.message
            ))),
        }
    }
}

/// One step of the nominal controller: apply the first planned input.
pub fn nominal_step(ctx: &ControllerContext, xi: &DVector<f64>) -> Result<StepResult> {
    ctx.check_state(xi)?;
    let (plan, cost) = ctx.solve_plan(xi)?;
    let m = ctx.layout().m;
    Ok(StepResult {
        applied_input: plan.u[0].clone(),
        nominal_input: plan.u[0].clone(),
        nominal_output: plan.y[0].clone(),
        disturbance: DVector::zeros(m),
        cost,
        gamma: plan.gamma,
        feasible: true,
        rank_after: None,
        excitation: Excitation::None,
        pure: true,
    })
}

/// One step of the tube controller from the nominal state `zeta`; the real
/// input adds error feedback `K (xi - zeta)`.
pub fn tube_step(ctx: &ControllerContext, xi: &DVector<f64>, zeta: &DVector<f64>) -> Result<StepResult> {
    ctx.check_state(xi)?;
    ctx.check_state(zeta)?;
    let tube = ctx.tube_params()?;
    let (plan, cost) = ctx.solve_plan(zeta)?;
    let feedback = &tube.gain * (xi - zeta);
    Ok(StepResult {
        applied_input: &plan.u[0] + feedback,
        nominal_input: plan.u[0].clone(),
        nominal_output: plan.y[0].clone(),
        disturbance: DVector::zeros(ctx.layout().m),
        cost,
        gamma: plan.gamma,
        feasible: true,
        rank_after: None,
        excitation: Excitation::None,
        pure: true,
    })
}

/// Tube step with the disturbance chosen inside the optimization. If the
/// undisturbed tube input already excites, it is optimal and used as is.
/// Otherwise each active kernel direction and sign gives one convex problem;
/// the cheapest feasible one wins, ties going to the lower column and to `+`
/// first. A winner that does not raise the rank is reported as skipped.
pub fn end_to_end_step(ctx: &ControllerContext, xi: &DVector<f64>, zeta: &DVector<f64>, probe: &Probe) -> Result<StepResult> {
    ctx.check_state(xi)?;
    ctx.check_state(zeta)?;
    let tube = ctx.tube_params()?;
    let undisturbed = tube_step(ctx, xi, zeta)?;
    if !probe.in_image(&undisturbed.applied_input) {
        return Ok(StepResult {
            excitation: Excitation::Natural,
            ..undisturbed
        });
    }
    let directions = probe.input_directions();
    if directions.is_empty() {
        log::warn!("exploration stalled: no kernel direction reaches the input");
        return Ok(StepResult {
            excitation: Excitation::Skipped,
            ..undisturbed
        });
    }

    let m = ctx.layout().m;
    let base = ctx.plan.instantiate(zeta);
    let n0 = base.num_vars;
    let off_u0 = n0;
    let off_d = n0 + m;
    let off_s = n0 + 2 * m;
    let n = n0 + 3 * m;
    let feedback = &tube.gain * (xi - zeta);

    let mut qp = base.clone();
    qp.num_vars = n;
    qp.quad_cost.ncols = n;
    qp.quad_cost.nrows = n;
    qp.lin_cost = qp.lin_cost.clone().resize_vertically(n, 0.0);
    for i in 0..m {
        qp.lin_cost[off_s + i] = tube.lambda;
    }
    qp.lower = qp.lower.clone().resize_vertically(n, f64::NEG_INFINITY);
    qp.upper = qp.upper.clone().resize_vertically(n, f64::INFINITY);
    qp.lower.rows_mut(off_d, m).copy_from(&tube.disturbance.lower);
    qp.upper.rows_mut(off_d, m).copy_from(&tube.disturbance.upper);
    qp.lower.rows_mut(off_s, m).fill(0.0);

    // u0 - v0 = K (xi - zeta)
    let n_eq0 = base.eq_lhs.nrows;
    let mut eq = base.eq_lhs.clone();
    eq.nrows = n_eq0 + m;
    eq.ncols = n;
    let off_v0 = ctx.plan.off_u();
    for i in 0..m {
        eq.push(n_eq0 + i, off_u0 + i, 1.0);
        eq.push(n_eq0 + i, off_v0 + i, -1.0);
    }
    qp.eq_lhs = eq;
    qp.eq_rhs = base.eq_rhs.clone().resize_vertically(n_eq0 + m, 0.0);
    qp.eq_rhs.rows_mut(n_eq0, m).copy_from(&feedback);

    // |d_i| <= s_i, plus one excitation row filled per disjunct.
    let mut ineq = SparseMat::zeros(2 * m + 1, n);
    for i in 0..m {
        ineq.push(i, off_d + i, 1.0);
        ineq.push(i, off_s + i, -1.0);
        ineq.push(m + i, off_d + i, -1.0);
        ineq.push(m + i, off_s + i, -1.0);
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut failures = Vec::new();
    for (col, (kappa_u, offset)) in directions.iter().enumerate() {
        let needed = probe.required_offset(col, tube.epsilon);
        for sigma in [1.0, -1.0] {
            // sigma (c + kappa_u' (u0 + d)) >= needed
            let mut rows = ineq.clone();
            for i in 0..m {
                rows.push(2 * m, off_u0 + i, -sigma * kappa_u[i]);
                rows.push(2 * m, off_d + i, -sigma * kappa_u[i]);
            }
            let mut cand = qp.clone();
            cand.ineq_lhs = rows;
            cand.ineq_rhs = DVector::zeros(2 * m + 1);
            cand.ineq_rhs[2 * m] = sigma * offset - needed;
            let sol = solve_qp_with(&cand, &ctx.spec.solver)?;
            match sol.status {
                QpStatus::Optimal => {
                    if best.as_ref().is_none_or(|(obj, _)| sol.objective < *obj) {
                        best = Some((sol.objective, sol.x));
                    }
                }
                other => failures.push(format!("column {col} sign {sigma:+}: {other:?}")),
            }
        }
    }
    let (_, x) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "every exploration disjunct failed: {}",
            failures.join("; ")
        ))
    })?;
    let values = ctx.plan.decode(&x);
    let mut d = x.rows(off_d, m).into_owned();
    d.apply(|v| {
        if v.abs() <= 1e-9 {
            *v = 0.0
        }
    });
    let u0 = x.rows(off_u0, m).into_owned();
    let cost = base.objective(&x.rows(0, n0).into_owned()) + ctx.plan.constant;
    let applied = u0 + &d;
    let excitation = if probe.in_image(&applied) && probe.excitation_score(&applied) <= 1.0 {
        Excitation::Skipped
    } else if d.iter().any(|v| *v != 0.0) {
        Excitation::Designed
    } else {
        Excitation::Natural
    };
    Ok(StepResult {
        applied_input: applied,
        nominal_input: values.u[0].clone(),
        nominal_output: values.y[0].clone(),
        disturbance: d,
        cost,
        gamma: values.gamma,
        feasible: true,
        rank_after: None,
        excitation,
        pure: false,
    })
}
