//! Boxes, tube gain, RPI outer box and constraint tightening.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lin_plant::dare_gain;
use crate::linalg::spectral_radius;
use crate::Layout;

/// Axis-aligned box. A box with some `lower > upper` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        Ok(BoxSet { lower, upper })
    }

    /// `[-r, r]^dim`
    pub fn symmetric(dim: usize, r: f64) -> Self {
        BoxSet {
            lower: DVector::from_element(dim, -r),
            upper: DVector::from_element(dim, r),
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        BoxSet::symmetric(dim, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(self.upper.iter()).any(|(l, u)| l > u)
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.first_violation(v, tol).is_none()
    }

    pub fn contains_origin(&self) -> bool {
        self.contains(&DVector::zeros(self.dim()), 0.0)
    }

    /// Index of the first coordinate outside the box by more than `tol`.
    pub fn first_violation(&self, v: &DVector<f64>, tol: f64) -> Option<usize> {
        (0..self.dim()).find(|&i| !(v[i] >= self.lower[i] - tol && v[i] <= self.upper[i] + tol))
    }

    /// Per-coordinate largest magnitude, the half-width of the symmetric hull.
    pub fn magnitude(&self) -> DVector<f64> {
        self.lower.zip_map(&self.upper, |l, u| l.abs().max(u.abs()))
    }

    /// `[lo, hi]` repeated `times` times.
    pub fn repeat(&self, times: usize) -> BoxSet {
        let n = self.dim();
        BoxSet {
            lower: DVector::from_fn(n * times, |i, _| self.lower[i % n]),
            upper: DVector::from_fn(n * times, |i, _| self.upper[i % n]),
        }
    }
}

/// Box outer approximation of the minimal robust positive invariant set of
/// `e+ = A_cl e + B d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RpiSet {
    pub radius: DVector<f64>,
    pub contraction_alpha: f64,
    pub truncation_s: usize,
}

impl RpiSet {
    pub fn zero(dim: usize) -> Self {
        RpiSet {
            radius: DVector::zeros(dim),
            contraction_alpha: 0.0,
            truncation_s: 0,
        }
    }

    pub fn contains(&self, e: &DVector<f64>, tol: f64) -> bool {
        (0..e.len()).all(|i| e[i].abs() <= self.radius[i] + tol)
    }
}

/// Sums `|A_cl^k B| dbar` for `k < s`, then inflates by `1/(1 - alpha)` where
/// `alpha` bounds how far `A_cl^s` maps the partial-sum box into itself.
pub fn rpi_outer_box(a_cl: &DMatrix<f64>, b: &DMatrix<f64>, d: &BoxSet, s: usize, alpha_tol: f64) -> Result<RpiSet> {
    let n = a_cl.nrows();
    if b.nrows() != n || b.ncols() != d.dim() {
        return Err(Error::Rpi("dimension mismatch".into()));
    }
    if !d.contains_origin() {
        return Err(Error::Rpi("disturbance set must contain the origin".into()));
    }
    if s == 0 {
        return Err(Error::Rpi("truncation s must be positive".into()));
    }
    let rho = spectral_radius(a_cl)?;
    if rho >= 1.0 {
        return Err(Error::Rpi(format!("closed loop unstable (spectral radius {rho})")));
    }
    let dbar = d.magnitude();
    let mut term = b.clone();
    let mut partial = DVector::zeros(n);
    for _ in 0..s {
        partial += term.abs() * &dbar;
        term = a_cl * term;
    }
    if partial.iter().all(|&v| v == 0.0) {
        return Ok(RpiSet {
            radius: partial,
            contraction_alpha: 0.0,
            truncation_s: s,
        });
    }
    let a_s = a_cl.pow(s as u32);
    let image = a_s.abs() * &partial;
    let mut alpha: f64 = 0.0;
    for i in 0..n {
        if image[i] > 0.0 {
            if partial[i] <= 0.0 {
                alpha = f64::INFINITY;
                break;
            }
            alpha = alpha.max(image[i] / partial[i]);
        }
    }
    if alpha >= 1.0 - alpha_tol {
        return Err(Error::Rpi(format!(
            "contraction factor {alpha:.3e} too large at s={s}; increase s"
        )));
    }
    Ok(RpiSet {
        radius: partial / (1.0 - alpha),
        contraction_alpha: alpha,
        truncation_s: s,
    })
}

/// Whether the box itself is one-step invariant: `|A_cl| r + |B| dbar <= r`.
/// Worst case over all box points, so this is exact for boxes.
pub fn is_box_invariant(a_cl: &DMatrix<f64>, b: &DMatrix<f64>, d: &BoxSet, radius: &DVector<f64>, tol: f64) -> bool {
    let reach = a_cl.abs() * radius + b.abs() * d.magnitude();
    (0..radius.len()).all(|i| reach[i] <= radius[i] + tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    LastInput,
    LastOutput,
}

/// Shrink `bx` by the RPI radii of the selected extended-state slot.
pub fn tighten(bx: &BoxSet, rpi: &RpiSet, selector: Selector, layout: Layout) -> Result<BoxSet> {
    let (offset, width) = match selector {
        Selector::LastInput => (layout.u_offset(layout.ell - 1), layout.m),
        Selector::LastOutput => (layout.y_offset(layout.ell - 1), layout.p),
    };
    if bx.dim() != width || rpi.radius.len() != layout.n_xi() {
        return Err(Error::Dimension {
            context: "tighten",
            expected: width,
            got: bx.dim(),
        });
    }
    if bx.is_empty() {
        return Err(Error::EmptyTightening("box already empty".into()));
    }
    let r = rpi.radius.rows(offset, width);
    let out = BoxSet {
        lower: &bx.lower + r,
        upper: &bx.upper - r,
    };
    if out.is_empty() {
        return Err(Error::EmptyTightening(format!(
            "{selector:?} radii {:?} exceed the box half-widths",
            r.as_slice()
        )));
    }
    Ok(out)
}

/// Stabilizing gain `u = K e` for the estimated extended pair.
pub fn tube_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, qk: &DMatrix<f64>, rk: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    dare_gain(a, b, qk, rk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_disturbance_gives_zero_radius() {
        let r = rpi_outer_box(&scalar(0.5), &scalar(1.0), &BoxSet::symmetric(1, 0.0), 10, 0.0).unwrap();
        assert_eq!(r.radius[0], 0.0);
    }

    #[test]
    fn scalar_matches_geometric_series() {
        for &a in &[0.5, -0.8, 0.95] {
            let r = rpi_outer_box(&scalar(a), &scalar(1.0), &BoxSet::symmetric(1, 0.2), 400, 0.0).unwrap();
            assert_abs_diff_eq!(r.radius[0], 0.2 / (1.0 - f64::abs(a)), epsilon = 1e-9);
            assert!(is_box_invariant(&scalar(a), &scalar(1.0), &BoxSet::symmetric(1, 0.2), &r.radius, 1e-12));
        }
    }

    #[test]
    fn short_truncation_still_bounds_series() {
        let r = rpi_outer_box(&scalar(0.9), &scalar(1.0), &BoxSet::symmetric(1, 1.0), 5, 0.0).unwrap();
        assert!(r.radius[0] >= 10.0 - 1e-9);
    }

    #[test]
    fn nilpotent_sum_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let r = rpi_outer_box(&a, &b, &BoxSet::symmetric(1, 0.1), 2, 0.0).unwrap();
        assert_eq!(r.contraction_alpha, 0.0);
        assert_abs_diff_eq!(r.radius, DVector::from_vec(vec![0.1, 0.1]), epsilon = 1e-15);
    }

    #[test]
    fn unstable_or_slow_closed_loop_rejected() {
        assert!(rpi_outer_box(&scalar(1.1), &scalar(1.0), &BoxSet::symmetric(1, 0.1), 10, 0.0).is_err());
        assert!(rpi_outer_box(&scalar(0.999), &scalar(1.0), &BoxSet::symmetric(1, 0.1), 1, 0.01).is_err());
    }

    #[test]
    fn tighten_interval_arithmetic() {
        let lay = Layout::new(2, 2, 1);
        let rpi = RpiSet {
            radius: DVector::from_vec(vec![0.1, 0.1, 0.2, 0.3]),
            contraction_alpha: 0.0,
            truncation_s: 1,
        };
        let u = tighten(&BoxSet::symmetric(2, 1.5), &rpi, Selector::LastInput, lay).unwrap();
        assert_abs_diff_eq!(u.upper, DVector::from_element(2, 1.4), epsilon = 1e-15);
        assert_abs_diff_eq!(u.lower, DVector::from_element(2, -1.4), epsilon = 1e-15);
        let y = tighten(&BoxSet::symmetric(2, 1.5), &rpi, Selector::LastOutput, lay).unwrap();
        assert_abs_diff_eq!(y.upper, DVector::from_vec(vec![1.3, 1.2]), epsilon = 1e-15);
        let same = tighten(&BoxSet::symmetric(2, 1.5), &RpiSet::zero(4), Selector::LastInput, lay).unwrap();
        assert_eq!(same, BoxSet::symmetric(2, 1.5));
        assert!(tighten(&BoxSet::symmetric(2, 0.05), &rpi, Selector::LastInput, lay).is_err());
    }

    #[test]
    fn larger_disturbance_never_loosens() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.6]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let lay = Layout::new(1, 1, 1);
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let rpi = rpi_outer_box(&a, &b, &BoxSet::symmetric(1, 0.05 * k as f64), 50, 0.0).unwrap();
            let u = tighten(&BoxSet::symmetric(1, 2.0), &rpi, Selector::LastInput, lay).unwrap();
            assert!(u.upper[0] <= prev);
            prev = u.upper[0];
        }
    }

    #[test]
    fn box_helpers() {
        let b = BoxSet::symmetric(2, 1.0);
        assert!(b.contains(&DVector::from_vec(vec![1.0, -1.0]), 0.0));
        assert_eq!(b.first_violation(&DVector::from_vec(vec![0.0, 1.1]), 1e-6), Some(1));
        assert!(!b.is_empty());
        assert!(BoxSet::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0])).unwrap().is_empty());
        assert_eq!(b.repeat(2).dim(), 4);
    }
}
