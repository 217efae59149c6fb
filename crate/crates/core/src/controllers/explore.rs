//! Image test and left-kernel disturbance design for active exploration.

use nalgebra::{DMatrix, DVector};

use crate::behavior::HankelPool;
use crate::error::{Error, Result};
use crate::lin_plant::Trajectory;
use crate::linalg::{full_left_svd, range_and_left_kernel, residual_norm, singular_values};
use crate::robust::BoxSet;

/// Input blocks below this are treated as zero.
const INPUT_BLOCK_TOL: f64 = 1e-9;

/// A new singular value must exceed the rank threshold by this factor to
/// count as excitation, so later growth of the largest singular value cannot
/// push it back under.
pub const EXCITATION_MARGIN: f64 = 2.0;

/// Geometry of `col(Y_up, U)` together with the data window ending at `t`.
///
/// The left kernel is rotated so that only its first `active` columns have a
/// nonzero input block; those are scaled to unit input 1-norm.
#[derive(Debug, Clone)]
pub struct Probe {
    /// Window with the newest input set to zero.
    window: DVector<f64>,
    image: DMatrix<f64>,
    kernel: DMatrix<f64>,
    active: usize,
    excitation: DMatrix<f64>,
    rank: usize,
    smax: f64,
    rank_tol: f64,
    image_tol: f64,
    m: usize,
    full: Option<FullColumn>,
}

/// Pool matrix and the column it would gain, as an affine map of the newest
/// input through `y_t = c_x + D u_t`.
#[derive(Debug, Clone)]
struct FullColumn {
    matrix: DMatrix<f64>,
    column: DVector<f64>,
    c_x: DVector<f64>,
    feedthrough: DMatrix<f64>,
    depth: usize,
    p: usize,
    rank: usize,
}

impl Probe {
    /// Needs `y_{t-L+1..t-1}` and `u_{t-L+1..t-1}`, so `t >= nbar - 1`.
    pub fn new(pool: &HankelPool, traj: &Trajectory, t: usize, image_tol: f64) -> Result<Self> {
        let lay = pool.layout;
        let (m, p) = (lay.m, lay.p);
        let depth = pool.depth();
        if t + 1 < pool.nbar || t > traj.len() {
            return Err(Error::OutOfRange {
                index: t as i64,
                lo: pool.nbar as i64 - 1,
                hi: traj.len() as i64,
            });
        }
        let t = t as i64;
        let first = t - depth as i64 + 1;
        let mut window = DVector::zeros(p * (depth - 1) + m * depth);
        for k in 0..depth - 1 {
            let tau = first + k as i64;
            window.rows_mut(p * k, p).copy_from(traj.output(tau)?);
            window
                .rows_mut(p * (depth - 1) + m * k, m)
                .copy_from(traj.input(tau)?);
        }

        let excitation = pool.excitation_matrix();
        let (image, kernel, smax) = range_and_left_kernel(&excitation, pool.rank_tol);
        let rank = image.ncols();
        let rows = kernel.nrows();
        let kdim = kernel.ncols();
        let (kernel, active) = if kdim == 0 {
            (kernel, 0)
        } else {
            let k_u = kernel.rows(rows - m, m).into_owned();
            let (rot, sv) = full_left_svd(&k_u.transpose());
            let mut rotated = &kernel * rot;
            let active = sv.iter().filter(|&&s| s > INPUT_BLOCK_TOL).count();
            for c in 0..active {
                let l1 = rotated.view((rows - m, c), (m, 1)).abs().sum();
                let mut col = rotated.column_mut(c);
                col /= l1;
                // fix the sign so the largest input entry is positive
                let lead = col.rows(rows - m, m).iamax();
                if col[rows - m + lead] < 0.0 {
                    col.neg_mut();
                }
            }
            (rotated, active)
        };
        Ok(Probe {
            window,
            image,
            kernel,
            active,
            excitation,
            rank,
            smax,
            rank_tol: pool.rank_tol,
            image_tol,
            m,
            full: None,
        })
    }

    /// Judge excitation on the full pool matrix, given the current output
    /// `c_x + D u` of the plant. `traj` must hold data up to `t - 1`.
    pub fn with_output(mut self, pool: &HankelPool, c_x: &DVector<f64>, feedthrough: &DMatrix<f64>) -> Self {
        let (m, p) = (self.m, pool.layout.p);
        let d = pool.depth();
        let matrix = pool.matrix();
        let mut column = DVector::zeros((m + p) * d);
        let n = self.window.len();
        let y_up = self.window.rows(0, p * (d - 1));
        let u_all = self.window.rows(p * (d - 1), n - p * (d - 1));
        column.rows_mut(0, m * d).copy_from(&u_all);
        column.rows_mut(m * d, p * (d - 1)).copy_from(&y_up);
        self.full = Some(FullColumn {
            matrix,
            column,
            c_x: c_x.clone(),
            feedthrough: feedthrough.clone(),
            depth: d,
            p,
            rank: pool.rank(),
        });
        self
    }

    /// Window with `u` in the newest input slot.
    pub fn candidate(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut w = self.window.clone();
        let n = w.len();
        w.rows_mut(n - self.m, self.m).copy_from(u);
        w
    }

    /// Whether the window completed by `u` lies in the image of the pool.
    /// It does when its least-squares residual is at most `image_tol |w|`,
    /// and also when appending it would not add a singular value clear of
    /// the rank threshold by `EXCITATION_MARGIN`.
    pub fn in_image(&self, u: &DVector<f64>) -> bool {
        let w = self.candidate(u);
        if residual_norm(&self.image, &w) <= self.image_tol * w.norm() {
            return true;
        }
        self.excitation_score(u) <= EXCITATION_MARGIN
    }

    /// Singular value the window completed by `u` would add, relative to the
    /// rank threshold; above 1 the rank grows.
    pub fn excitation_score(&self, u: &DVector<f64>) -> f64 {
        let (mat, col, rank) = match &self.full {
            Some(f) => {
                let mut col = f.column.clone();
                let m = self.m;
                col.rows_mut(m * (f.depth - 1), m).copy_from(u);
                let y = &f.c_x + &f.feedthrough * u;
                col.rows_mut(m * f.depth + f.p * (f.depth - 1), f.p).copy_from(&y);
                (&f.matrix, col, f.rank)
            }
            None => (&self.excitation, self.candidate(u), self.rank),
        };
        let cols = mat.ncols();
        let mut ext = mat.clone().resize_horizontally(cols + 1, 0.0);
        ext.set_column(cols, &col);
        let sv = singular_values(&ext);
        let next = sv.get(rank).copied().unwrap_or(0.0);
        if sv[0] <= 0.0 {
            return 0.0;
        }
        next / (self.rank_tol * sv[0])
    }

    /// Smallest `|kappa' w|` for kernel column `c` that keeps the window
    /// residual clear of the rank threshold.
    pub fn required_offset(&self, c: usize, epsilon: f64) -> f64 {
        let scale = self.kernel.column(c).norm();
        epsilon.max(EXCITATION_MARGIN * self.rank_tol * self.smax * scale)
    }

    /// `(kappa_u, c)` per active kernel column, with `c = kappa' w` taken at
    /// a zero newest input.
    pub fn input_directions(&self) -> Vec<(DVector<f64>, f64)> {
        let rows = self.kernel.nrows();
        (0..self.active)
            .map(|c| {
                let col = self.kernel.column(c);
                let kappa_u = col.rows(rows - self.m, self.m).into_owned();
                (kappa_u, col.dot(&self.window))
            })
            .collect()
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel.ncols()
    }

    pub fn active_dim(&self) -> usize {
        self.active
    }

    /// Rotated, scaled kernel basis.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }
}

/// True when the window at `t` completed by `u` lies in the image, that is,
/// when `u` alone would not raise the rank.
pub fn excitation_needed(pool: &HankelPool, traj: &Trajectory, t: usize, u: &DVector<f64>, image_tol: f64) -> Result<bool> {
    Ok(Probe::new(pool, traj, t, image_tol)?.in_image(u))
}

/// `d = s dbar sign(kappa_u)` along an active kernel column, with `s` the
/// sign of `kappa' w`; then `|kappa' (w + d)| >= dbar >= eps`. Columns are
/// tried in order and the first whose design leaves the image is used. If
/// none does, the design with the largest excitation score is used as long
/// as it still raises the rank; otherwise `ExplorationStalled`.
pub fn design_disturbance(probe: &Probe, u: &DVector<f64>, d_box: &BoxSet, epsilon: f64) -> Result<DVector<f64>> {
    let dbar = d_box.magnitude();
    if d_box.lower.iter().zip(dbar.iter()).any(|(l, m)| -l != *m)
        || dbar.iter().any(|&v| v < epsilon)
    {
        return Err(Error::InvalidArgument(format!(
            "disturbance box must be symmetric with half-width at least {epsilon}"
        )));
    }
    let dirs = probe.input_directions();
    if dirs.is_empty() {
        return Err(Error::ExplorationStalled);
    }
    let design = |kappa_u: &DVector<f64>, offset: f64| {
        let c = offset + kappa_u.dot(u);
        let s = if c >= 0.0 { 1.0 } else { -1.0 };
        DVector::from_fn(kappa_u.len(), |i, _| {
            if kappa_u[i].abs() <= INPUT_BLOCK_TOL {
                0.0
            } else {
                s * dbar[i] * kappa_u[i].signum()
            }
        })
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    for (kappa_u, offset) in &dirs {
        let d = design(kappa_u, *offset);
        let cand = u + &d;
        if !probe.in_image(&cand) {
            return Ok(d);
        }
        let score = probe.excitation_score(&cand);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, d));
        }
    }
    match best {
        Some((score, d)) if score > 1.0 => Ok(d),
        _ => Err(Error::ExplorationStalled),
    }
}
