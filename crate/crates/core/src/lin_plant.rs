//! Ground-truth LTI plant, Riccati gains and the seeded initial trajectory.
//!
//! Only the harness and test oracles touch plant matrices; the controllers
//! see input/output data exclusively.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, numerical_rank, pinv, spectral_radius};
use crate::robust::BoxSet;
use crate::Layout;

pub const MODEL_RANK_TOL: f64 = 1e-9;

/// `x+ = A x + B u`, `y = C x + D u`
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl PlantModel {
    /// Checks dimensions, observability of `(A, C)` and stabilizability of `(A, B)`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let dims = [
            ("A cols", n, a.ncols()),
            ("B rows", n, b.nrows()),
            ("C cols", n, c.ncols()),
            ("D rows", c.nrows(), d.nrows()),
            ("D cols", b.ncols(), d.ncols()),
        ];
        for (context, expected, got) in dims {
            if expected != got {
                return Err(Error::Dimension {
                    context,
                    expected,
                    got,
                });
            }
        }
        if n == 0 || b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::Plant("empty dimension".into()));
        }
        let obs = linalg::observability_rank(&a, &c, MODEL_RANK_TOL);
        if obs < n {
            return Err(Error::Plant(format!("(A, C) not observable: rank {obs} < {n}")));
        }
        if !is_stabilizable(&a, &b)? {
            return Err(Error::Plant("(A, B) not stabilizable".into()));
        }
        Ok(PlantModel { a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Observability index, the smallest history length that fixes the state.
    pub fn lag(&self) -> usize {
        linalg::observability_index(&self.a, &self.c, MODEL_RANK_TOL).expect("observable by construction")
    }

    /// Steady state `x` with `x = A x + B u`, `y = C x + D u`.
    pub fn steady_state(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        let lhs = linalg::vstack(&[&(&self.a - DMatrix::identity(n, n)), &self.c]);
        let rhs = linalg::vcat(&[&(-(&self.b * u)), &(y - &self.d * u)]);
        let x = pinv(&lhs, 1e-12) * &rhs;
        let res = (&lhs * &x - &rhs).amax();
        if res > 1e-9 {
            return Err(Error::Plant(format!(
                "(u, y) is not an equilibrium of the plant (residual {res:e})"
            )));
        }
        Ok(x)
    }
}

fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    let n = a.nrows();
    let m = b.ncols();
    let mut wide = DMatrix::zeros(n, n * m);
    let mut cur = b.clone();
    for k in 0..n {
        wide.view_mut((0, k * m), (n, m)).copy_from(&cur);
        cur = a * &cur;
    }
    let r = numerical_rank(&wide, MODEL_RANK_TOL);
    if r == n {
        return Ok(true);
    }
    // Uncontrollable modes live on the orthogonal complement of the
    // controllable subspace.
    let vu = linalg::left_kernel(&wide, MODEL_RANK_TOL);
    let auu = vu.transpose() * a * &vu;
    Ok(spectral_radius(&auu)? < 1.0)
}

/// Exact affine update.
pub fn step(plant: &PlantModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.len() != plant.n() {
        return Err(Error::Dimension {
            context: "step state",
            expected: plant.n(),
            got: x.len(),
        });
    }
    if u.len() != plant.m() {
        return Err(Error::Dimension {
            context: "step input",
            expected: plant.m(),
            got: u.len(),
        });
    }
    let y = &plant.c * x + &plant.d * u;
    let xn = &plant.a * x + &plant.b * u;
    Ok((xn, y))
}

/// Linearized four-tank benchmark. `D = 0`.
pub fn four_tank() -> PlantModel {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.1, 0.0, //
            0.0, 1.0, 0.0, 0.1, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    );
    let b = DMatrix::from_row_slice(4, 2, &[0.1, 0.0, 0.0, 0.1, 0.0, 0.1, 0.1, 0.0]);
    let c = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let d = DMatrix::zeros(2, 2);
    PlantModel::new(a, b, c, d).expect("four-tank model is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Riccati {
    /// Stabilizing gain, `u = K x`.
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub iterations: usize,
}

pub const DARE_MAX_ITER: usize = 10_000;
pub const DARE_TOL: f64 = 1e-10;

/// Discrete algebraic Riccati equation by fixed-point iteration.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, qw: &DMatrix<f64>, rw: &DMatrix<f64>) -> Result<Riccati> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || qw.shape() != (n, n) || rw.shape() != (m, m) {
        return Err(Error::InvalidArgument("dare dimension mismatch".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = qw.clone();
    for it in 1..=DARE_MAX_ITER {
        let bpb = rw + &bt * &p * b;
        let chol = bpb
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Riccati("R + B'PB not positive definite".into()))?;
        let bpa = &bt * &p * a;
        let next = qw + &at * &p * a - bpa.transpose() * chol.solve(&bpa);
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Riccati("iteration diverged".into()));
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= DARE_TOL * p.amax().max(1.0) {
            let bpb = rw + &bt * &p * b;
            let k = -bpb
                .cholesky()
                .ok_or_else(|| Error::Riccati("R + B'PB not positive definite".into()))?
                .solve(&(&bt * &p * a));
            let rho = spectral_radius(&(a + b * &k))?;
            if rho >= 1.0 {
                return Err(Error::Riccati(format!(
                    "closed loop not stable (spectral radius {rho})"
                )));
            }
            return Ok(Riccati {
                k,
                p,
                iterations: it,
            });
        }
    }
    Err(Error::Riccati(format!(
        "no convergence within {DARE_MAX_ITER} iterations"
    )))
}

pub fn dare_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, qw: &DMatrix<f64>, rw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    dare(a, b, qw, rw).map(|r| r.k)
}

/// Non-minimal realization of the plant on the extended state, built from
/// the true model. Harness and test use only.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Output of the current step: `y_t = c xi_t + d u_t`.
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Plant state recovered from the extended state: `x_t = state_map xi_t`.
    pub state_map: DMatrix<f64>,
}

pub fn extended_realization(plant: &PlantModel, ell: usize) -> Result<ExtendedRealization> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    if ell < plant.lag() {
        return Err(Error::InvalidArgument(format!(
            "history length {ell} below the plant lag {}",
            plant.lag()
        )));
    }
    let lay = Layout::new(m, p, ell);
    // y_{k} = C A^k x0 + sum_{i<k} C A^{k-1-i} B u_i + D u_k for k < ell
    let mut obs = DMatrix::zeros(p * ell, n);
    let mut toep = DMatrix::zeros(p * ell, m * ell);
    let mut powers = vec![DMatrix::identity(n, n)];
    for k in 1..=ell {
        let next = &powers[k - 1] * &plant.a;
        powers.push(next);
    }
    for k in 0..ell {
        obs.view_mut((p * k, 0), (p, n)).copy_from(&(&plant.c * &powers[k]));
        toep.view_mut((p * k, m * k), (p, m)).copy_from(&plant.d);
        for i in 0..k {
            toep.view_mut((p * k, m * i), (p, m))
                .copy_from(&(&plant.c * &powers[k - 1 - i] * &plant.b));
        }
    }
    let mut ctrb = DMatrix::zeros(n, m * ell);
    for i in 0..ell {
        ctrb.view_mut((0, m * i), (n, m))
            .copy_from(&(&powers[ell - 1 - i] * &plant.b));
    }
    let obs_pinv = pinv(&obs, 1e-12);
    let al = &powers[ell];
    let mut state_map = DMatrix::zeros(n, lay.n_xi());
    state_map
        .view_mut((0, 0), (n, m * ell))
        .copy_from(&(&ctrb - al * &obs_pinv * &toep));
    state_map
        .view_mut((0, m * ell), (n, p * ell))
        .copy_from(&(al * &obs_pinv));

    let nx = lay.n_xi();
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, m);
    for k in 0..ell - 1 {
        a.view_mut((lay.u_offset(k), lay.u_offset(k + 1)), (m, m))
            .fill_with_identity();
        a.view_mut((lay.y_offset(k), lay.y_offset(k + 1)), (p, p))
            .fill_with_identity();
    }
    b.view_mut((lay.u_offset(ell - 1), 0), (m, m)).fill_with_identity();
    let c = &plant.c * &state_map;
    a.view_mut((lay.y_offset(ell - 1), 0), (p, nx)).copy_from(&c);
    b.view_mut((lay.y_offset(ell - 1), 0), (p, m)).copy_from(&plant.d);
    Ok(ExtendedRealization {
        a,
        b,
        c,
        d: plant.d.clone(),
        state_map,
    })
}

/// Input/output record of one iteration, including the `ell`-step prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ell: usize,
    /// `inputs[k]` holds `u_{k - ell}`.
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Prefix-only trajectory encoding `xi_0 = xi^S`.
    pub fn with_prefix(ell: usize, u_start: &DVector<f64>, y_start: &DVector<f64>) -> Self {
        Trajectory {
            ell,
            inputs: vec![u_start.clone(); ell],
            outputs: vec![y_start.clone(); ell],
        }
    }

    /// Number of recorded steps after the prefix.
    pub fn len(&self) -> usize {
        self.inputs.len() - self.ell
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn p(&self) -> usize {
        self.outputs[0].len()
    }

    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.inputs.push(u);
        self.outputs.push(y);
    }

    fn index(&self, t: i64) -> Result<usize> {
        let lo = -(self.ell as i64);
        let hi = self.len() as i64 - 1;
        if t < lo || t > hi {
            return Err(Error::OutOfRange { index: t, lo, hi });
        }
        Ok((t - lo) as usize)
    }

    pub fn input(&self, t: i64) -> Result<&DVector<f64>> {
        Ok(&self.inputs[self.index(t)?])
    }

    pub fn output(&self, t: i64) -> Result<&DVector<f64>> {
        Ok(&self.outputs[self.index(t)?])
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.m(), self.p(), self.ell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitFeedback {
    /// LQR on the plant state.
    PlantState,
    /// LQR on the extended state of the true-model realization.
    ExtendedState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub feedback: InitFeedback,
    pub lqr_q: DMatrix<f64>,
    pub lqr_r: DMatrix<f64>,
    pub amplitude: f64,
    pub duration: usize,
    pub ell: usize,
    pub u_start: DVector<f64>,
    pub y_start: DVector<f64>,
    pub u_target: DVector<f64>,
    pub y_target: DVector<f64>,
    pub terminal_tol: f64,
    pub max_steps: usize,
    pub input_box: BoxSet,
    pub output_box: BoxSet,
}

/// LQR tracking run from `xi^S` to `xi^F` with uniform input disturbances on
/// the first `duration` steps. Deterministic per seed.
pub fn generate_initial_trajectory(plant: &PlantModel, cfg: &InitConfig, seed: u64) -> Result<Trajectory> {
    let lay = Layout::new(plant.m(), plant.p(), cfg.ell);
    let x_start = plant.steady_state(&cfg.u_start, &cfg.y_start)?;
    let x_target = plant.steady_state(&cfg.u_target, &cfg.y_target)?;
    let xi_target = crate::behavior::constant_extended_state(lay, &cfg.u_target, &cfg.y_target);

    enum Law {
        Plant(DMatrix<f64>),
        Extended(DMatrix<f64>),
    }
    let law = match cfg.feedback {
        InitFeedback::PlantState => Law::Plant(dare_gain(&plant.a, &plant.b, &cfg.lqr_q, &cfg.lqr_r)?),
        InitFeedback::ExtendedState => {
            let ext = extended_realization(plant, cfg.ell)?;
            Law::Extended(dare_gain(&ext.a, &ext.b, &cfg.lqr_q, &cfg.lqr_r)?)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory::with_prefix(cfg.ell, &cfg.u_start, &cfg.y_start);
    let mut x = x_start;
    for t in 0..cfg.max_steps {
        let xi = crate::behavior::extended_state(&traj, t)?;
        let mut u = match &law {
            Law::Plant(k) => &cfg.u_target + k * (&x - &x_target),
            Law::Extended(k) => &cfg.u_target + k * (&xi - &xi_target),
        };
        if t < cfg.duration && cfg.amplitude > 0.0 {
            for i in 0..u.len() {
                u[i] += rng.random_range(-cfg.amplitude..=cfg.amplitude);
            }
        }
        let (xn, y) = step(plant, &x, &u)?;
        if let Some(i) = cfg.input_box.first_violation(&u, 0.0) {
            return Err(Error::UnsafeTrajectory(format!(
                "initial trajectory input {i} leaves its box at t={t}"
            )));
        }
        if let Some(i) = cfg.output_box.first_violation(&y, 0.0) {
            return Err(Error::UnsafeTrajectory(format!(
                "initial trajectory output {i} leaves its box at t={t}"
            )));
        }
        traj.push(u, y);
        x = xn;
        let xi_next = crate::behavior::extended_state(&traj, t + 1)?;
        if (&xi_next - &xi_target).amax() <= cfg.terminal_tol {
            return Ok(traj);
        }
    }
    Err(Error::NotConverged(cfg.max_steps))
}
