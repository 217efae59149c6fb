//! Extended states, Hankel pools, rank tests and data-driven prediction.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lin_plant::Trajectory;
use crate::linalg::{self, pinv};
use crate::Layout;

pub use crate::linalg::numerical_rank;

/// `col(u_{t-ell}, .., u_{t-1}, y_{t-ell}, .., y_{t-1})` for `t` in `[0, T]`.
pub fn extended_state(traj: &Trajectory, t: usize) -> Result<DVector<f64>> {
    if t > traj.len() {
        return Err(Error::OutOfRange {
            index: t as i64,
            lo: 0,
            hi: traj.len() as i64,
        });
    }
    let lay = traj.layout();
    let mut xi = DVector::zeros(lay.n_xi());
    for k in 0..lay.ell {
        // inputs[t + k] holds u_{t + k - ell}
        xi.rows_mut(lay.u_offset(k), lay.m).copy_from(&traj.inputs[t + k]);
        xi.rows_mut(lay.y_offset(k), lay.p).copy_from(&traj.outputs[t + k]);
    }
    Ok(xi)
}

/// Extended state of a system resting at `(u, y)`.
pub fn constant_extended_state(lay: Layout, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut xi = DVector::zeros(lay.n_xi());
    for k in 0..lay.ell {
        xi.rows_mut(lay.u_offset(k), lay.m).copy_from(u);
        xi.rows_mut(lay.y_offset(k), lay.p).copy_from(y);
    }
    xi
}

/// Drop the oldest input/output pair and append `(u, y)`.
pub fn shift_extended_state(lay: Layout, xi: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(lay.n_xi());
    let (m, p, ell) = (lay.m, lay.p, lay.ell);
    out.rows_mut(0, m * (ell - 1)).copy_from(&xi.rows(m, m * (ell - 1)));
    out.rows_mut(lay.u_offset(ell - 1), m).copy_from(u);
    out.rows_mut(lay.y_offset(0), p * (ell - 1))
        .copy_from(&xi.rows(lay.y_offset(1), p * (ell - 1)));
    out.rows_mut(lay.y_offset(ell - 1), p).copy_from(y);
    out
}

/// Block Hankel matrix of depth `depth`; column `k` stacks `w_k .. w_{k+depth-1}`.
pub fn hankel(signal: &[DVector<f64>], depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 || signal.len() < depth {
        return Err(Error::InvalidArgument(format!(
            "hankel depth {depth} needs at least that many samples, got {}",
            signal.len()
        )));
    }
    let q = signal[0].len();
    let cols = signal.len() - depth + 1;
    let mut h = DMatrix::zeros(q * depth, cols);
    for c in 0..cols {
        for r in 0..depth {
            h.view_mut((q * r, c), (q, 1)).copy_from(&signal[c + r]);
        }
    }
    Ok(h)
}

/// Whether `rank col(H_L(u), H_L(y)) = m L + n`.
pub fn check_identifiability(u: &[DVector<f64>], y: &[DVector<f64>], depth: usize, n: usize, rel_tol: f64) -> bool {
    let (Ok(hu), Ok(hy)) = (hankel(u, depth), hankel(y, depth)) else {
        return false;
    };
    let m = u[0].len();
    linalg::numerical_rank(&linalg::vstack(&[&hu, &hy]), rel_tol) == m * depth + n
}

/// One stored length-`depth` trajectory window, `col(u, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Identifier of the trajectory the window was cut from.
    pub source: usize,
    /// Time index of the first sample.
    pub start: i64,
    pub data: DVector<f64>,
}

/// Pool of depth-`ell + nbar` windows gathered across iterations.
#[derive(Debug, Clone)]
pub struct HankelPool {
    pub layout: Layout,
    pub nbar: usize,
    /// System order used in the rank condition.
    pub order: usize,
    pub rank_tol: f64,
    windows: Vec<Window>,
    rank_cache: usize,
}

impl HankelPool {
    pub fn new(layout: Layout, nbar: usize, order: usize, rank_tol: f64) -> Self {
        HankelPool {
            layout,
            nbar,
            order,
            rank_tol,
            windows: Vec::new(),
            rank_cache: 0,
        }
    }

    /// Pool holding every depth-`ell + nbar` window of `traj`.
    pub fn from_trajectory(layout: Layout, nbar: usize, order: usize, rank_tol: f64, traj: &Trajectory, source: usize) -> Result<Self> {
        let mut pool = HankelPool::new(layout, nbar, order, rank_tol);
        for t in (nbar as i64 - 1)..(traj.len() as i64) {
            pool.push_window(traj, source, t)?;
        }
        pool.refresh_rank();
        Ok(pool)
    }

    pub fn depth(&self) -> usize {
        self.layout.ell + self.nbar
    }

    pub fn columns(&self) -> usize {
        self.windows.len()
    }

    pub fn rank(&self) -> usize {
        self.rank_cache
    }

    /// `m L + n` at the full depth.
    pub fn full_rank(&self) -> usize {
        self.layout.m * self.depth() + self.order
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank_cache >= self.full_rank()
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    fn window_of(&self, traj: &Trajectory, t: i64) -> Result<DVector<f64>> {
        let depth = self.depth() as i64;
        let lo = self.nbar as i64 - 1;
        let hi = traj.len() as i64 - 1;
        if t < lo || t > hi {
            return Err(Error::OutOfRange { index: t, lo, hi });
        }
        let (m, p) = (self.layout.m, self.layout.p);
        let d = self.depth();
        let mut data = DVector::zeros((m + p) * d);
        for (k, tau) in ((t - depth + 1)..=t).enumerate() {
            data.rows_mut(m * k, m).copy_from(traj.input(tau)?);
            data.rows_mut(m * d + p * k, p).copy_from(traj.output(tau)?);
        }
        Ok(data)
    }

    fn push_window(&mut self, traj: &Trajectory, source: usize, t: i64) -> Result<()> {
        let data = self.window_of(traj, t)?;
        self.windows.push(Window {
            source,
            start: t - self.depth() as i64 + 1,
            data,
        });
        Ok(())
    }

    fn refresh_rank(&mut self) {
        self.rank_cache = linalg::numerical_rank(&self.matrix(), self.rank_tol);
    }

    /// Append the window `[t - depth + 1, t]` of `traj` and recompute the rank.
    pub fn append_column(&mut self, traj: &Trajectory, source: usize, t: i64) -> Result<usize> {
        self.push_window(traj, source, t)?;
        self.refresh_rank();
        Ok(self.rank_cache)
    }

    /// Append every full-depth window of `traj` at once.
    pub fn append_trajectory(&mut self, traj: &Trajectory, source: usize) -> Result<usize> {
        for t in (self.nbar as i64 - 1)..(traj.len() as i64) {
            self.push_window(traj, source, t)?;
        }
        self.refresh_rank();
        Ok(self.rank_cache)
    }

    /// `col(U, Y)` at full depth.
    pub fn matrix(&self) -> DMatrix<f64> {
        let rows = (self.layout.m + self.layout.p) * self.depth();
        let mut h = DMatrix::zeros(rows, self.windows.len());
        for (c, w) in self.windows.iter().enumerate() {
            h.set_column(c, &w.data);
        }
        h
    }

    pub fn u_block(&self) -> DMatrix<f64> {
        let r = self.layout.m * self.depth();
        self.matrix().rows(0, r).into_owned()
    }

    pub fn y_block(&self) -> DMatrix<f64> {
        let r = self.layout.m * self.depth();
        let h = self.matrix();
        h.rows(r, h.nrows() - r).into_owned()
    }

    /// `col(Y_up, U)`: all outputs but the newest, then all inputs.
    pub fn excitation_matrix(&self) -> DMatrix<f64> {
        let (m, p) = (self.layout.m, self.layout.p);
        let d = self.depth();
        let h = self.matrix();
        linalg::vstack(&[
            &h.rows(m * d, p * (d - 1)).into_owned(),
            &h.rows(0, m * d).into_owned(),
        ])
    }

    /// Every distinct contiguous sub-window of length `len`, as `(u, y)` pairs.
    fn rewindow(&self, len: usize) -> Vec<(DVector<f64>, DVector<f64>)> {
        let (m, p) = (self.layout.m, self.layout.p);
        let d = self.depth();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for w in &self.windows {
            for o in 0..=(d - len) {
                if !seen.insert((w.source, w.start + o as i64)) {
                    continue;
                }
                let u = w.data.rows(m * o, m * len).into_owned();
                let y = w.data.rows(m * d + p * o, p * len).into_owned();
                out.push((u, y));
            }
        }
        out
    }

    /// `col(U, Y)` built from all sub-windows of length `len`.
    pub fn matrix_at_depth(&self, len: usize) -> Result<DMatrix<f64>> {
        if len == 0 || len > self.depth() {
            return Err(Error::InvalidArgument(format!(
                "depth {len} outside [1, {}]",
                self.depth()
            )));
        }
        let (m, p) = (self.layout.m, self.layout.p);
        let cols = self.rewindow(len);
        let mut h = DMatrix::zeros((m + p) * len, cols.len());
        for (c, (u, y)) in cols.iter().enumerate() {
            h.view_mut((0, c), (m * len, 1)).copy_from(u);
            h.view_mut((m * len, c), (p * len, 1)).copy_from(y);
        }
        Ok(h)
    }

    pub fn rank_at_depth(&self, len: usize) -> Result<usize> {
        Ok(linalg::numerical_rank(&self.matrix_at_depth(len)?, self.rank_tol))
    }

    /// Largest horizon `N <= nbar` whose depth-`ell + N` Hankel matrix meets
    /// the rank condition; 0 if none.
    pub fn max_horizon(&self) -> usize {
        if self.windows.is_empty() {
            return 0;
        }
        let (m, ell) = (self.layout.m, self.layout.ell);
        for n in (1..=self.nbar).rev() {
            let len = ell + n;
            let rank = if n == self.nbar {
                self.rank_cache
            } else {
                self.rank_at_depth(len).unwrap_or(0)
            };
            if rank == m * len + self.order {
                return n;
            }
        }
        0
    }

    /// Row split into past/future blocks with `t_ini` past and `horizon`
    /// future samples.
    pub fn partition(&self, t_ini: usize, horizon: usize) -> Result<HankelBlocks> {
        let len = t_ini + horizon;
        if len > self.depth() || horizon == 0 || t_ini == 0 {
            return Err(Error::InvalidArgument(format!(
                "partition depth {len} exceeds pool depth {}",
                self.depth()
            )));
        }
        let h = self.matrix_at_depth(len)?;
        let (m, p) = (self.layout.m, self.layout.p);
        let up = h.rows(0, m * t_ini).into_owned();
        let uf = h.rows(m * t_ini, m * horizon).into_owned();
        let yp = h.rows(m * len, p * t_ini).into_owned();
        let yf = h.rows(m * len + p * t_ini, p * horizon).into_owned();
        let rank = linalg::numerical_rank(&h, self.rank_tol);
        Ok(HankelBlocks {
            up,
            yp,
            uf,
            yf,
            t_ini,
            horizon,
            m,
            p,
            order: self.order,
            rank,
            rank_tol: self.rank_tol,
        })
    }
}

/// Past/future row blocks of a depth `t_ini + horizon` Hankel stack.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlocks {
    pub up: DMatrix<f64>,
    pub yp: DMatrix<f64>,
    pub uf: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    pub t_ini: usize,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
    pub order: usize,
    pub rank: usize,
    pub rank_tol: f64,
}

impl HankelBlocks {
    pub fn columns(&self) -> usize {
        self.up.ncols()
    }

    pub fn required_rank(&self) -> usize {
        self.m * (self.t_ini + self.horizon) + self.order
    }

    pub fn check_rank(&self) -> Result<()> {
        if self.rank != self.required_rank() {
            return Err(Error::RankCondition {
                rank: self.rank,
                required: self.required_rank(),
            });
        }
        Ok(())
    }

    /// `col(U_P, Y_P, U_F, Y_F)`
    pub fn stacked(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.up, &self.yp, &self.uf, &self.yf])
    }

    /// `col(U_P, Y_P, U_F)`
    pub fn inputs_and_past(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.up, &self.yp, &self.uf])
    }
}

/// Outputs uniquely fixed by an initial window and future inputs.
pub fn predict(blocks: &HankelBlocks, u_ini: &DVector<f64>, y_ini: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    blocks.check_rank()?;
    let lhs = blocks.inputs_and_past();
    let rhs = linalg::vcat(&[u_ini, y_ini, u]);
    if rhs.len() != lhs.nrows() {
        return Err(Error::Dimension {
            context: "predict",
            expected: lhs.nrows(),
            got: rhs.len(),
        });
    }
    let g = pinv(&lhs, blocks.rank_tol) * rhs;
    Ok(&blocks.yf * g)
}

/// One-step extended dynamics `xi+ = A xi + B u` from depth `ell + 1` data.
/// Shift rows are exact; the newest-output rows come from the least-squares
/// fit of `Y_F` on `col(U_P, Y_P, U_F)`.
pub fn estimate_extended_dynamics(blocks: &HankelBlocks) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if blocks.horizon != 1 {
        return Err(Error::InvalidArgument("extended dynamics need horizon 1".into()));
    }
    blocks.check_rank()?;
    let lay = Layout::new(blocks.m, blocks.p, blocks.t_ini);
    let (m, p, ell) = (lay.m, lay.p, lay.ell);
    let nx = lay.n_xi();
    let theta = &blocks.yf * pinv(&blocks.inputs_and_past(), blocks.rank_tol);
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, m);
    for k in 0..ell - 1 {
        a.view_mut((lay.u_offset(k), lay.u_offset(k + 1)), (m, m))
            .fill_with_identity();
        a.view_mut((lay.y_offset(k), lay.y_offset(k + 1)), (p, p))
            .fill_with_identity();
    }
    b.view_mut((lay.u_offset(ell - 1), 0), (m, m)).fill_with_identity();
    a.view_mut((lay.y_offset(ell - 1), 0), (p, nx))
        .copy_from(&theta.columns(0, nx));
    b.view_mut((lay.y_offset(ell - 1), 0), (p, m))
        .copy_from(&theta.columns(nx, m));
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lin_plant::{four_tank, step, PlantModel};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn random_traj(plant: &PlantModel, ell: usize, len: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DVector::zeros(plant.n());
        let mut traj = Trajectory::with_prefix(ell, &DVector::zeros(plant.m()), &DVector::zeros(plant.p()));
        for _ in 0..len {
            let u = DVector::from_fn(plant.m(), |_, _| rng.random_range(-1.0..1.0));
            let (xn, y) = step(plant, &x, &u).unwrap();
            traj.push(u, y);
            x = xn;
        }
        traj
    }

    #[test]
    fn extended_state_at_start_is_prefix() {
        let traj = Trajectory::with_prefix(3, &v(&[1.0]), &v(&[2.0]));
        let xi = extended_state(&traj, 0).unwrap();
        assert_eq!(xi, v(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]));
        assert!(extended_state(&traj, 1).is_err());
    }

    #[test]
    fn extended_state_single_lag() {
        let mut traj = Trajectory::with_prefix(1, &v(&[0.0]), &v(&[0.0]));
        traj.push(v(&[3.0]), v(&[4.0]));
        assert_eq!(extended_state(&traj, 1).unwrap(), v(&[3.0, 4.0]));
    }

    #[test]
    fn four_tank_extended_dimension() {
        let traj = Trajectory::with_prefix(4, &DVector::zeros(2), &DVector::zeros(2));
        assert_eq!(extended_state(&traj, 0).unwrap().len(), 16);
    }

    #[test]
    fn shift_matches_recomputed_state() {
        let plant = four_tank();
        let traj = random_traj(&plant, 4, 10, 1);
        let lay = traj.layout();
        for t in 0..10 {
            let xi = extended_state(&traj, t).unwrap();
            let next = shift_extended_state(lay, &xi, &traj.inputs[t + 4], &traj.outputs[t + 4]);
            assert_eq!(next, extended_state(&traj, t + 1).unwrap());
        }
    }

    #[test]
    fn scalar_hankel() {
        let s: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| v(&[x])).collect();
        let h = hankel(&s, 2).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
        let full = hankel(&s, 4).unwrap();
        assert_eq!(full.shape(), (4, 1));
        assert!(hankel(&s, 5).is_err());
    }

    #[test]
    fn vector_hankel_index_arithmetic() {
        let s: Vec<_> = (0..6).map(|k| v(&[k as f64, 10.0 + k as f64])).collect();
        let h = hankel(&s, 3).unwrap();
        for c in 0..4 {
            for r in 0..3 {
                assert_eq!(h[(2 * r, c)], (c + r) as f64);
                assert_eq!(h[(2 * r + 1, c)], 10.0 + (c + r) as f64);
            }
        }
    }

    #[test]
    fn rank_of_low_rank_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(20, 7, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(7, 30, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(numerical_rank(&(a * b), 1e-6), 7);
    }

    #[test]
    fn white_noise_identifies_random_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plant = loop {
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.9..0.9));
            let b = DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
            if let Ok(p) = PlantModel::new(a, b, c, DMatrix::zeros(1, 1)) {
                break p;
            }
        };
        let traj = random_traj(&plant, 1, 60, 8);
        let u = &traj.inputs[1..];
        let y = &traj.outputs[1..];
        assert!(check_identifiability(u, y, 5, 2, 1e-6));
        let zeros = vec![DVector::zeros(1); 60];
        assert!(!check_identifiability(&zeros, &zeros, 5, 2, 1e-6));
    }

    fn pool_of(traj: &Trajectory, nbar: usize) -> HankelPool {
        HankelPool::from_trajectory(traj.layout(), nbar, 4, 1e-6, traj, 0).unwrap()
    }

    #[test]
    fn pool_column_count_and_duplicates() {
        let plant = four_tank();
        let traj = random_traj(&plant, 4, 80, 3);
        let mut pool = pool_of(&traj, 10);
        assert_eq!(pool.columns(), 80 - 10 + 1);
        let rank = pool.rank();
        assert_eq!(rank, pool.full_rank());
        let cols = pool.columns();
        pool.append_column(&traj, 0, 40).unwrap();
        assert_eq!(pool.columns(), cols + 1);
        assert_eq!(pool.rank(), rank);
        assert!(pool.append_column(&traj, 0, 8).is_err());
        assert!(pool.append_column(&traj, 0, 80).is_err());
    }

    #[test]
    fn max_horizon_of_constant_data_is_zero() {
        let mut traj = Trajectory::with_prefix(2, &v(&[1.0]), &v(&[1.0]));
        for _ in 0..30 {
            traj.push(v(&[1.0]), v(&[1.0]));
        }
        let pool = HankelPool::from_trajectory(traj.layout(), 5, 1, 1e-6, &traj, 0).unwrap();
        assert_eq!(pool.max_horizon(), 0);
    }

    #[test]
    fn max_horizon_tracks_data_length() {
        let plant = four_tank();
        // Columns = len - N + 1 with depth 4 + N; need 2(4 + N) + 4 of them.
        let traj = random_traj(&plant, 4, 40, 5);
        let pool = pool_of(&traj, 20);
        let n = pool.max_horizon();
        let len = 4 + n;
        assert!(pool.rank_at_depth(len).unwrap() == 2 * len + 4);
        assert!(n == 20 || pool.rank_at_depth(len + 1).unwrap() < 2 * (len + 1) + 4);
        assert_eq!(n, 9);
    }

    #[test]
    fn partition_round_trip() {
        let plant = four_tank();
        let traj = random_traj(&plant, 4, 60, 6);
        let pool = pool_of(&traj, 10);
        let blocks = pool.partition(4, 3).unwrap();
        assert_eq!(
            (blocks.up.nrows(), blocks.yp.nrows(), blocks.uf.nrows(), blocks.yf.nrows()),
            (8, 8, 6, 6)
        );
        let h = pool.matrix_at_depth(7).unwrap();
        let back = linalg::vstack(&[&blocks.up, &blocks.uf, &blocks.yp, &blocks.yf]);
        assert_eq!(back, h);
        // Contiguous re-windowing reproduces the plain Hankel matrix.
        let hu = hankel(&traj.inputs, 7).unwrap();
        let hy = hankel(&traj.outputs, 7).unwrap();
        assert_eq!(h, linalg::vstack(&[&hu, &hy]));
        assert!(pool.partition(4, 11).is_err());
    }

    #[test]
    fn predict_reproduces_stored_column_and_zero() {
        let plant = four_tank();
        let traj = random_traj(&plant, 4, 60, 7);
        let pool = pool_of(&traj, 10);
        let blocks = pool.partition(4, 5).unwrap();
        let c = 17;
        let y = predict(
            &blocks,
            &blocks.up.column(c).into_owned(),
            &blocks.yp.column(c).into_owned(),
            &blocks.uf.column(c).into_owned(),
        )
        .unwrap();
        assert_abs_diff_eq!(y, blocks.yf.column(c).into_owned(), epsilon = 1e-9);
        let z = predict(&blocks, &DVector::zeros(8), &DVector::zeros(8), &DVector::zeros(10)).unwrap();
        assert_abs_diff_eq!(z, DVector::zeros(10), epsilon = 1e-14);
    }

    #[test]
    fn predict_rejects_rank_deficient_blocks() {
        let plant = four_tank();
        let traj = random_traj(&plant, 4, 25, 7);
        let pool = pool_of(&traj, 10);
        let blocks = pool.partition(4, 10).unwrap();
        assert!(predict(&blocks, &DVector::zeros(8), &DVector::zeros(8), &DVector::zeros(20)).is_err());
    }

    #[test]
    fn extended_dynamics_structure_and_accuracy() {
        let plant = four_tank();
        let traj = random_traj(&plant, 4, 60, 10);
        let pool = pool_of(&traj, 10);
        let (a, b) = estimate_extended_dynamics(&pool.partition(4, 1).unwrap()).unwrap();
        let lay = traj.layout();
        assert_abs_diff_eq!(b.rows(0, 6).into_owned(), DMatrix::zeros(6, 2), epsilon = 1e-7);
        for k in 0..3 {
            assert_abs_diff_eq!(
                a.view((lay.u_offset(k), lay.u_offset(k + 1)), (2, 2)).into_owned(),
                DMatrix::identity(2, 2),
                epsilon = 1e-7
            );
        }
        let probe = random_traj(&plant, 4, 100, 11);
        for t in 0..100 {
            let xi = extended_state(&probe, t).unwrap();
            let next = extended_state(&probe, t + 1).unwrap();
            let pred = &a * &xi + &b * &probe.inputs[t + 4];
            assert!((pred - next).amax() <= 1e-7);
        }
    }
}
