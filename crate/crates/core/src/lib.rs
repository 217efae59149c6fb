//! Data-enabled predictive repetitive control.
//!
//! A direct data-driven controller for LTI systems that repeat the same task
//! from a start extended state to a target extended state. Past trajectories
//! serve twice: as a Hankel-matrix behavioral model of the plant and as a
//! convex safe set whose cost-to-go bounds the tail of every plan. A tube
//! variant injects left-kernel designed input disturbances so that each new
//! Hankel column raises the rank by one, growing the usable prediction horizon
//! in a known number of steps.
//!
//! Module map:
//!
//! * [`optim`]: convex QP/LP interface backed by an interior-point solver.
//! * [`lin_plant`]: ground-truth LTI simulation, Riccati gains, seeded initial
//!   trajectory. Controllers never read plant matrices.
//! * [`behavior`]: extended states, Hankel pools, rank tests, data-driven
//!   prediction and one-step extended dynamics.
//! * [`safe_set`]: convex safe set, terminal cost LP and the safe policy.
//! * [`robust`]: boxes, tube gain, RPI outer box, constraint tightening.
//! * [`controllers`]: nominal, tube and end-to-end controllers, exploration
//!   and the iteration loop.
//! * [`harness`]: experiment configuration, orchestration and CSV reports.

pub mod behavior;
pub mod controllers;
pub mod error;
pub mod harness;
pub mod lin_plant;
pub mod linalg;
pub mod optim;
pub mod robust;
pub mod safe_set;

pub use error::{Error, Result};

/// Dimensions shared by every extended-state quantity.
///
/// An extended state stacks the last `ell` inputs followed by the last `ell`
/// outputs, oldest first: `col(u_{t-ell}, .., u_{t-1}, y_{t-ell}, .., y_{t-1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Layout {
    pub m: usize,
    pub p: usize,
    pub ell: usize,
}

impl Layout {
    pub fn new(m: usize, p: usize, ell: usize) -> Self {
        Layout { m, p, ell }
    }

    /// `(m + p) * ell`
    pub fn n_xi(&self) -> usize {
        (self.m + self.p) * self.ell
    }

    /// Offset of the input slot `k` (0 = oldest) inside an extended state.
    pub fn u_offset(&self, k: usize) -> usize {
        self.m * k
    }

    /// Offset of the output slot `k` (0 = oldest) inside an extended state.
    pub fn y_offset(&self, k: usize) -> usize {
        self.m * self.ell + self.p * k
    }
}
