//! Closed-loop iterations and the outer repetitive loop.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    design_disturbance, end_to_end_step, nominal_step, tube_step, ControllerContext, ControllerMode, ControllerSpec,
    Excitation, Probe, StepResult, TubeParams,
};
use crate::behavior::{constant_extended_state, estimate_extended_dynamics, extended_state, shift_extended_state, HankelPool};
use crate::error::{Error, Result};
use crate::lin_plant::{step, PlantModel, Trajectory};
use crate::optim::SolverSettings;
use crate::robust::{rpi_outer_box, tighten, tube_gain, BoxSet, RpiSet, Selector};
use crate::safe_set::{cost_to_go, Admission, Branch, SafeSet, StageCost};
use crate::Layout;

/// Experiment variants compared on a shared initial trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentMode {
    /// Nominal controller; every new window is appended to the pool.
    #[serde(rename = "passive")]
    Passive,
    /// Tube controller plus designed disturbances until the pool is full.
    #[serde(rename = "2s-lkb")]
    TwoStageLkb,
    /// Disturbance chosen inside the tube problem until the pool is full.
    #[serde(rename = "1s")]
    OneStage,
    /// Nominal controller on the initial data only.
    #[serde(rename = "nominal")]
    NominalFixed,
}

impl ExperimentMode {
    pub const ALL: [ExperimentMode; 4] = [
        ExperimentMode::Passive,
        ExperimentMode::TwoStageLkb,
        ExperimentMode::OneStage,
        ExperimentMode::NominalFixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentMode::Passive => "passive",
            ExperimentMode::TwoStageLkb => "2s-lkb",
            ExperimentMode::OneStage => "1s",
            ExperimentMode::NominalFixed => "nominal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn explores(self) -> bool {
        matches!(self, ExperimentMode::TwoStageLkb | ExperimentMode::OneStage)
    }
}

impl std::fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub layout: Layout,
    pub nbar: usize,
    /// State dimension `n` in the rank target `m L + n`.
    pub order: usize,
    pub input_box: BoxSet,
    pub output_box: BoxSet,
    pub disturbance: BoxSet,
    pub cost: StageCost,
    pub u_start: DVector<f64>,
    pub y_start: DVector<f64>,
    pub rank_tol: f64,
    pub image_tol: f64,
    pub epsilon: f64,
    pub lambda: f64,
    /// Weights of the Riccati problem behind the tube gain (times identity).
    pub tube_q: f64,
    pub tube_r: f64,
    pub rpi_truncation: usize,
    pub rpi_alpha_tol: f64,
    pub terminal_tol: f64,
    pub box_tol: f64,
    /// Per-iteration step limit; defaults to ten times the initial length.
    pub step_cap: Option<usize>,
    pub max_iterations: usize,
    pub output_tol: f64,
    /// Horizon of the fixed-data nominal mode; defaults to the initial one.
    pub fixed_horizon: Option<usize>,
    pub solver: SolverSettings,
}

impl RunSettings {
    /// Four-tank benchmark defaults.
    pub fn four_tank() -> Self {
        let layout = Layout::new(2, 2, 4);
        RunSettings {
            layout,
            nbar: 50,
            order: 4,
            input_box: BoxSet::symmetric(2, 1.5),
            output_box: BoxSet::symmetric(2, 1.5),
            disturbance: BoxSet::symmetric(2, 0.05),
            cost: StageCost {
                q: DMatrix::identity(2, 2),
                r: DMatrix::identity(2, 2) * 0.1,
                u_target: DVector::zeros(2),
                y_target: DVector::from_vec(vec![0.4, -0.4]),
            },
            u_start: DVector::zeros(2),
            y_start: DVector::zeros(2),
            rank_tol: 1e-6,
            image_tol: 1e-7,
            epsilon: 1e-3,
            lambda: 10.0,
            tube_q: 1.0,
            tube_r: 1.0,
            rpi_truncation: 150,
            rpi_alpha_tol: 1e-3,
            terminal_tol: 1e-4,
            box_tol: 1e-9,
            step_cap: None,
            max_iterations: 20,
            output_tol: 1e-6,
            fixed_horizon: None,
            solver: SolverSettings::default(),
        }
    }

    fn admission<'a>(&self, input_box: &'a BoxSet, output_box: &'a BoxSet) -> Admission<'a> {
        Admission {
            input_box,
            output_box,
            box_tol: self.box_tol,
            terminal_tol: self.terminal_tol,
        }
    }
}

/// Error feedback, invariant error box and tightened boxes of the tube modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeSetup {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub rpi: RpiSet,
    pub input_box: BoxSet,
    pub output_box: BoxSet,
}

impl TubeSetup {
    /// Estimates the one-step extended dynamics from `pool` and builds the
    /// gain, the error box and the tightened constraints.
    pub fn new(pool: &HankelPool, settings: &RunSettings) -> Result<Self> {
        let lay = settings.layout;
        let blocks = pool.partition(lay.ell, 1)?;
        let (a, b) = estimate_extended_dynamics(&blocks)?;
        let nx = lay.n_xi();
        let qk = DMatrix::identity(nx, nx) * settings.tube_q;
        let rk = DMatrix::identity(lay.m, lay.m) * settings.tube_r;
        let gain = tube_gain(&a, &b, &qk, &rk).map_err(|e| e.context("tube gain"))?;
        let a_cl = &a + &b * &gain;
        let rpi = rpi_outer_box(
            &a_cl,
            &b,
            &settings.disturbance,
            settings.rpi_truncation,
            settings.rpi_alpha_tol,
        )?;
        let input_box = tighten(&settings.input_box, &rpi, Selector::LastInput, lay)?;
        let output_box = tighten(&settings.output_box, &rpi, Selector::LastOutput, lay)?;
        Ok(TubeSetup {
            a,
            b,
            gain,
            rpi,
            input_box,
            output_box,
        })
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankPoint {
    pub columns: usize,
    pub rank: usize,
}

/// Per-iteration switches and tolerances for [`run_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOptions {
    /// Pool source tag for appended windows.
    pub source: usize,
    /// Design disturbances while the pool is not full.
    pub explore: bool,
    /// Append windows without designing disturbances.
    pub passive_append: bool,
    pub image_tol: f64,
    pub terminal_tol: f64,
    pub step_cap: usize,
    pub box_tol: f64,
    pub u_start: DVector<f64>,
    pub y_start: DVector<f64>,
    /// Untightened boxes the real trajectory is checked against.
    pub input_box: BoxSet,
    pub output_box: BoxSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub real: Trajectory,
    /// `(v, z)` record in the tube modes.
    pub nominal: Option<Trajectory>,
    pub steps: Vec<StepResult>,
    pub rank_trace: Vec<RankPoint>,
    pub designed: usize,
    pub natural: usize,
    pub skipped: usize,
    /// Largest `J*(t+1) - J*(t) + h(t)` over consecutive steps.
    pub lyapunov_excess: f64,
    pub box_violations: usize,
    pub nominal_box_violations: usize,
    /// Largest amount by which `|xi - zeta|` exceeds the error box.
    pub rpi_excess: f64,
}

/// Runs one iteration from `xi^S` until the extended state (and in tube modes
/// the nominal state) reaches the target.
pub fn run_iteration(ctx: &ControllerContext, plant: &PlantModel, pool: &mut HankelPool, opts: &IterationOptions) -> Result<IterationOutcome> {
    let lay = ctx.layout();
    let (m, p) = (lay.m, lay.p);
    let spec = ctx.spec();
    let tubed = ctx.mode() != ControllerMode::Nominal;
    let target = ctx.safe_set().target.clone();
    let nbar = spec.nbar;

    let mut x = plant.steady_state(&opts.u_start, &opts.y_start)?;
    let mut real = Trajectory::with_prefix(lay.ell, &opts.u_start, &opts.y_start);
    let mut nominal = Trajectory::with_prefix(lay.ell, &opts.u_start, &opts.y_start);
    let mut zeta = constant_extended_state(lay, &opts.u_start, &opts.y_start);

    let mut out = IterationOutcome {
        real: real.clone(),
        nominal: None,
        steps: Vec::new(),
        rank_trace: Vec::new(),
        designed: 0,
        natural: 0,
        skipped: 0,
        lyapunov_excess: f64::NEG_INFINITY,
        box_violations: 0,
        nominal_box_violations: 0,
        rpi_excess: f64::NEG_INFINITY,
    };
    let mut prev: Option<(f64, f64)> = None;
    let mut finished = false;
    for t in 0..opts.step_cap {
        let xi = extended_state(&real, t)?;
        let near = |v: &DVector<f64>| (v - &target).amax() <= opts.terminal_tol;
        let pending = opts.explore && tubed && !pool.is_full_rank();
        if near(&xi) && (!tubed || near(&zeta)) && !pending {
            finished = true;
            break;
        }
        if let Some(tube) = ctx.tube() {
            let e = &xi - &zeta;
            for i in 0..e.len() {
                out.rpi_excess = out.rpi_excess.max(e[i].abs() - tube.rpi.radius[i]);
            }
        }
        let window_ready = t + 1 >= nbar;
        let exploring = opts.explore && tubed && window_ready && !pool.is_full_rank();
        let mut st = match ctx.mode() {
            ControllerMode::Nominal => nominal_step(ctx, &xi)?,
            ControllerMode::TubeLkb => {
                let mut s = tube_step(ctx, &xi, &zeta)?;
                if exploring {
                    explore_two_stage(ctx, pool, &real, t, opts.image_tol, &(&plant.c * &x), &plant.d, &mut s)?;
                }
                s
            }
            ControllerMode::EndToEnd => {
                if exploring {
                    let probe = Probe::new(pool, &real, t, opts.image_tol)?.with_output(pool, &(&plant.c * &x), &plant.d);
                    end_to_end_step(ctx, &xi, &zeta, &probe)?
                } else {
                    tube_step(ctx, &xi, &zeta)?
                }
            }
        };
        match st.excitation {
            Excitation::Designed => out.designed += 1,
            Excitation::Natural => out.natural += 1,
            Excitation::Skipped => out.skipped += 1,
            Excitation::None => {}
        }

        let (xn, y) = step(plant, &x, &st.applied_input)?;
        if !opts.input_box.contains(&st.applied_input, opts.box_tol) || !opts.output_box.contains(&y, opts.box_tol) {
            out.box_violations += 1;
        }
        if tubed {
            if !spec.input_box.contains(&st.nominal_input, opts.box_tol)
                || !spec.output_box.contains(&st.nominal_output, opts.box_tol)
            {
                out.nominal_box_violations += 1;
            }
            zeta = shift_extended_state(lay, &zeta, &st.nominal_input, &st.nominal_output);
            nominal.push(st.nominal_input.clone(), st.nominal_output.clone());
        }
        real.push(st.applied_input.clone(), y);
        x = xn;

        if let (Some((c_prev, h_prev)), true) = (prev, st.pure) {
            out.lyapunov_excess = out.lyapunov_excess.max(st.cost - c_prev + h_prev);
        }
        prev = Some((st.cost, spec.cost.eval(&st.nominal_input, &st.nominal_output)));

        let explored = exploring && st.excitation != Excitation::Skipped;
        let append = window_ready && !pool.is_full_rank() && (explored || opts.passive_append);
        if append {
            let rank = pool.append_column(&real, opts.source, t as i64)?;
            st.rank_after = Some(rank);
            out.rank_trace.push(RankPoint {
                columns: pool.columns(),
                rank,
            });
        }
        debug_assert_eq!(st.applied_input.len(), m);
        debug_assert_eq!(st.nominal_output.len(), p);
        out.steps.push(st);
    }
    if !finished {
        return Err(Error::NotConverged(opts.step_cap));
    }
    out.real = real;
    out.nominal = tubed.then_some(nominal);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn explore_two_stage(
    ctx: &ControllerContext,
    pool: &HankelPool,
    traj: &Trajectory,
    t: usize,
    image_tol: f64,
    c_x: &DVector<f64>,
    feedthrough: &DMatrix<f64>,
    s: &mut StepResult,
) -> Result<()> {
    let tube = ctx.tube().ok_or_else(|| Error::InvalidArgument("missing tube parameters".into()))?;
    let probe = Probe::new(pool, traj, t, image_tol)?.with_output(pool, c_x, feedthrough);
    if !probe.in_image(&s.applied_input) {
        s.excitation = Excitation::Natural;
        return Ok(());
    }
    match design_disturbance(&probe, &s.applied_input, &tube.disturbance, tube.epsilon) {
        Ok(d) => {
            s.applied_input += &d;
            s.disturbance = d;
            s.excitation = Excitation::Designed;
            Ok(())
        }
        Err(Error::ExplorationStalled) => {
            log::warn!("exploration stalled at t={t}: no kernel direction excites within the disturbance box");
            s.excitation = Excitation::Skipped;
            Ok(())
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub j: usize,
    /// `None` for the initial trajectory.
    pub horizon: Option<usize>,
    pub controller: Option<ControllerMode>,
    pub cost_real: f64,
    pub cost_nominal: f64,
    pub steps: usize,
    pub millis: f64,
    pub designed: usize,
    pub natural: usize,
    pub skipped: usize,
    pub lyapunov_excess: f64,
    pub box_violations: usize,
    pub nominal_box_violations: usize,
    pub rpi_excess: f64,
    pub rank_end: usize,
    pub columns_end: usize,
    pub real: Trajectory,
    pub nominal: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: ExperimentMode,
    pub iterations: Vec<IterationRecord>,
    /// Starts with the pool built from the initial trajectory.
    pub rank_trace: Vec<RankPoint>,
    pub initial_rank: usize,
    pub full_rank: usize,
    pub tube: Option<TubeSetup>,
    /// Whether the output sequence stopped changing before the cap.
    pub converged: bool,
}

impl RunReport {
    /// Designed plus natural exploration steps over the run.
    pub fn exploration_steps(&self) -> usize {
        self.iterations.iter().map(|r| r.designed + r.natural).sum()
    }

    pub fn designed_steps(&self) -> usize {
        self.iterations.iter().map(|r| r.designed).sum()
    }

    /// Appended columns needed to first reach `rank`, if ever.
    pub fn columns_to_reach(&self, rank: usize) -> Option<usize> {
        let base = self.rank_trace.first()?.columns;
        self.rank_trace
            .iter()
            .find(|pt| pt.rank >= rank)
            .map(|pt| pt.columns - base)
    }
}

fn output_gap(a: &Trajectory, b: &Trajectory, y_target: &DVector<f64>) -> f64 {
    let n = a.outputs.len().max(b.outputs.len());
    (0..n)
        .map(|k| {
            let ya = a.outputs.get(k).unwrap_or(y_target);
            let yb = b.outputs.get(k).unwrap_or(y_target);
            (ya - yb).amax()
        })
        .fold(0.0, f64::max)
}

/// Repetitive loop for one experiment mode from a shared initial trajectory.
pub fn run_deeprc(settings: &RunSettings, mode: ExperimentMode, plant: &PlantModel, initial: &Trajectory) -> Result<RunReport> {
    let lay = settings.layout;
    if initial.layout() != lay {
        return Err(Error::InvalidArgument("initial trajectory layout mismatch".into()));
    }
    let cost = &settings.cost;
    let mut pool = HankelPool::from_trajectory(lay, settings.nbar, settings.order, settings.rank_tol, initial, 0)?;
    let initial_rank = pool.rank();
    let mut rank_trace = vec![RankPoint {
        columns: pool.columns(),
        rank: initial_rank,
    }];
    let mut safe = SafeSet::new(lay, &cost.u_target, &cost.y_target);
    safe.add_trajectory(
        initial,
        cost,
        0,
        Branch::Nominal,
        &settings.admission(&settings.input_box, &settings.output_box),
    )
    .map_err(|e| e.context("initial trajectory"))?;

    let tube = if mode.explores() && !pool.is_full_rank() {
        let setup = TubeSetup::new(&pool, settings)?;
        // The shifted initial trajectory is the first feasible tube plan.
        SafeSet::new(lay, &cost.u_target, &cost.y_target)
            .add_trajectory(
                initial,
                cost,
                0,
                Branch::Tube,
                &settings.admission(&setup.input_box, &setup.output_box),
            )
            .map_err(|e| e.context("initial trajectory against tightened boxes"))?;
        Some(setup)
    } else {
        None
    };

    let step_cap = settings.step_cap.unwrap_or(10 * initial.len().max(1));
    let fixed_horizon = match settings.fixed_horizon {
        Some(n) => n,
        None => pool.max_horizon(),
    };
    let j0_cost = cost_to_go(initial, 0, cost);
    let mut records = vec![IterationRecord {
        j: 0,
        horizon: None,
        controller: None,
        cost_real: j0_cost,
        cost_nominal: j0_cost,
        steps: initial.len(),
        millis: 0.0,
        designed: 0,
        natural: 0,
        skipped: 0,
        lyapunov_excess: f64::NEG_INFINITY,
        box_violations: 0,
        nominal_box_violations: 0,
        rpi_excess: f64::NEG_INFINITY,
        rank_end: initial_rank,
        columns_end: pool.columns(),
        real: initial.clone(),
        nominal: None,
    }];

    let mut converged = false;
    for j in 1..=settings.max_iterations {
        let clock = Instant::now();
        let exploring = mode.explores() && !pool.is_full_rank();
        let horizon = match mode {
            ExperimentMode::NominalFixed => fixed_horizon,
            _ => pool.max_horizon(),
        };
        if horizon == 0 {
            return Err(Error::RankCondition {
                rank: pool.rank(),
                required: pool.full_rank(),
            });
        }
        let blocks = pool.partition(lay.ell, horizon)?;
        let (controller, view, input_box, output_box, tube_params) = if exploring {
            let setup = tube.as_ref().ok_or_else(|| Error::InvalidArgument("tube setup missing".into()))?;
            let controller = if mode == ExperimentMode::OneStage {
                ControllerMode::EndToEnd
            } else {
                ControllerMode::TubeLkb
            };
            (
                controller,
                safe.filtered(|s| s.iteration == 0 || s.branch == Branch::Tube),
                setup.input_box.clone(),
                setup.output_box.clone(),
                Some(TubeParams {
                    gain: setup.gain.clone(),
                    rpi: setup.rpi.clone(),
                    disturbance: settings.disturbance.clone(),
                    epsilon: settings.epsilon,
                    lambda: settings.lambda,
                }),
            )
        } else {
            (
                ControllerMode::Nominal,
                safe.clone(),
                settings.input_box.clone(),
                settings.output_box.clone(),
                None,
            )
        };
        let spec = ControllerSpec {
            mode: controller,
            nbar: settings.nbar,
            cost: cost.clone(),
            input_box: input_box.clone(),
            output_box: output_box.clone(),
            tube: tube_params,
            solver: settings.solver,
        };
        let ctx = ControllerContext::new(spec, blocks, view)?;
        let opts = IterationOptions {
            source: j,
            explore: exploring,
            passive_append: mode == ExperimentMode::Passive,
            image_tol: settings.image_tol,
            terminal_tol: settings.terminal_tol,
            step_cap,
            box_tol: settings.box_tol,
            u_start: settings.u_start.clone(),
            y_start: settings.y_start.clone(),
            input_box: settings.input_box.clone(),
            output_box: settings.output_box.clone(),
        };
        let outcome = run_iteration(&ctx, plant, &mut pool, &opts)
            .map_err(|e| e.context(format!("{mode} iteration {j}")))?;
        rank_trace.extend(outcome.rank_trace.iter().copied());

        let cost_real = cost_to_go(&outcome.real, 0, cost);
        let cost_nominal = match &outcome.nominal {
            Some(nom) => {
                safe.add_trajectory(nom, cost, j, Branch::Tube, &settings.admission(&input_box, &output_box))
                    .map_err(|e| e.context(format!("{mode} iteration {j} nominal trajectory")))?;
                cost_to_go(nom, 0, cost)
            }
            None => {
                safe.add_trajectory(
                    &outcome.real,
                    cost,
                    j,
                    Branch::Nominal,
                    &settings.admission(&input_box, &output_box),
                )
                .map_err(|e| e.context(format!("{mode} iteration {j} trajectory")))?;
                cost_real
            }
        };
        let gap = output_gap(&outcome.real, &records[j - 1].real, &cost.y_target);
        records.push(IterationRecord {
            j,
            horizon: Some(horizon),
            controller: Some(controller),
            cost_real,
            cost_nominal,
            steps: outcome.real.len(),
            millis: clock.elapsed().as_secs_f64() * 1e3,
            designed: outcome.designed,
            natural: outcome.natural,
            skipped: outcome.skipped,
            lyapunov_excess: outcome.lyapunov_excess,
            box_violations: outcome.box_violations,
            nominal_box_violations: outcome.nominal_box_violations,
            rpi_excess: outcome.rpi_excess,
            rank_end: pool.rank(),
            columns_end: pool.columns(),
            real: outcome.real,
            nominal: outcome.nominal,
        });
        if gap <= settings.output_tol {
            converged = true;
            break;
        }
    }
    Ok(RunReport {
        mode,
        iterations: records,
        rank_trace,
        initial_rank,
        full_rank: pool.full_rank(),
        tube,
        converged,
    })
}
