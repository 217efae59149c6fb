//! Dense linear-algebra helpers shared by the behavioral and robust layers.

use nalgebra::{DMatrix, DVector, Schur, SVD};

use crate::error::{Error, Result};

fn svd_of(m: &DMatrix<f64>, u: bool, v: bool) -> SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    SVD::new(m.clone(), u, v)
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = svd_of(m, false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    rank_from_singular_values(&s, rel_tol)
}

pub fn rank_from_singular_values(s: &[f64], rel_tol: f64) -> usize {
    let smax = s.iter().copied().fold(0.0_f64, f64::max);
    if smax <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * smax).count()
}

/// Moore-Penrose pseudoinverse with a relative singular value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = svd_of(m, true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v requested");
    let smax = svd.singular_values.max();
    let mut out = DMatrix::zeros(c, r);
    if smax <= 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    out
}

/// Full left singular basis with descending singular values. Wide or square
/// inputs give a square `U` directly; tall inputs are zero-padded so the
/// decomposition also returns the orthogonal complement.
pub(crate) fn full_left_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (r, c) = m.shape();
    let work = if c < r {
        let mut padded = DMatrix::zeros(r, r);
        padded.view_mut((0, 0), (r, c)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = SVD::new(work, true, false);
    let u = svd.u.expect("u requested");
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let cols: Vec<_> = order.iter().map(|&k| u.column(k).into_owned()).collect();
    let sorted = order.iter().map(|&k| s[k]).collect();
    (DMatrix::from_columns(&cols), sorted)
}

/// Orthonormal basis of the column space of `m`.
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let r = m.nrows();
    if r == 0 || m.ncols() == 0 {
        return DMatrix::zeros(r, 0);
    }
    let (u, s) = full_left_svd(m);
    let k = rank_from_singular_values(&s, rel_tol);
    u.columns(0, k).into_owned()
}

/// Orthonormal basis of the left kernel `{k : k' m = 0}`.
pub fn left_kernel(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let r = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::identity(r, r);
    }
    let (u, s) = full_left_svd(m);
    let k = rank_from_singular_values(&s, rel_tol);
    u.columns(k, r - k).into_owned()
}

/// Orthonormal bases of the column space and the left kernel of `m`,
/// plus the largest singular value.
pub fn range_and_left_kernel(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let r = m.nrows();
    if m.ncols() == 0 {
        return (DMatrix::zeros(r, 0), DMatrix::identity(r, r), 0.0);
    }
    let (u, s) = full_left_svd(m);
    let k = rank_from_singular_values(&s, rel_tol);
    let smax = s.first().copied().unwrap_or(0.0);
    (u.columns(0, k).into_owned(), u.columns(k, r - k).into_owned(), smax)
}

/// Least-squares residual of `v` against the column space of `basis`,
/// assuming `basis` has orthonormal columns.
pub fn residual_norm(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    let proj = basis * (basis.transpose() * v);
    (v - proj).norm()
}

/// Spectral radius via a real Schur decomposition.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Dimension {
            context: "spectral_radius",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let schur = Schur::try_new(a.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::Numerical("schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Stack matrices with equal column counts vertically.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Stack vectors end to end.
pub fn vcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(*p);
        r += p.len();
    }
    out
}

/// Rank of the observability-type stack `col(C, CA, .., CA^{n-1})`.
pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>, rel_tol: f64) -> usize {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = c.clone();
    for _ in 0..n {
        blocks.push(cur.clone());
        cur = &cur * a;
    }
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    numerical_rank(&vstack(&refs), rel_tol)
}

/// Smallest `k` with `rank col(C, .., CA^{k-1}) = n`, if any.
pub fn observability_index(a: &DMatrix<f64>, c: &DMatrix<f64>, rel_tol: f64) -> Option<usize> {
    let n = a.nrows();
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut cur = c.clone();
    for k in 1..=n {
        blocks.push(cur.clone());
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        if numerical_rank(&vstack(&refs), rel_tol) == n {
            return Some(k);
        }
        cur = &cur * a;
    }
    None
}
