//! Singular value decomposition by one-sided Jacobi rotations, plus
//! truncation and reconstruction.
//!
//! Conventions, fixed so that downstream row/column selection reproduces
//! exactly:
//! - singular values sorted non-increasing, ties keep their pre-sort order;
//! - for each column of `u` the entry of largest magnitude is non-negative
//!   (ties broken by lowest row index), with `v` flipped to compensate;
//! - zero singular directions of `u` are completed deterministically from
//!   canonical basis vectors so `u` is always orthonormal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::matrix::Matrix;
use crate::Result;

/// Convergence: a column pair is considered orthogonal once
/// `|b_p . b_q| <= REL_OFF_TOL * ||b_p|| * ||b_q||`. The relative form keeps
/// the final `u` orthogonality defect below `n * REL_OFF_TOL` regardless of
/// the matrix scale or rank deficiency.
const REL_OFF_TOL: f64 = 1e-13;

/// Sweep budget; exceeding it reports a convergence error instead of
/// returning silently inaccurate factors.
const MAX_SWEEPS: usize = 60;

/// Orthogonality defect allowed by the factor invariants (Frobenius).
const ORTHO_TOL: f64 = 1e-10;

/// The `(u, s, v)` triple of a (possibly truncated) SVD: `w ≈ u·diag(s)·vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    u: Matrix,
    s: Vec<f64>,
    v: Matrix,
    source_rows: usize,
    source_cols: usize,
}

impl SvdFactors {
    /// Build factors from parts, validating the type invariants:
    /// `s` non-negative and sorted non-increasing, `uᵀu = vᵀv = I` within
    /// 1e-10 Frobenius, and `r <= min(source_rows, source_cols)`.
    pub fn new(u: Matrix, s: Vec<f64>, v: Matrix, source_rows: usize, source_cols: usize) -> Result<Self> {
        let r = s.len();
        if u.cols() != r || v.cols() != r {
            return Err(Error::Shape(format!(
                "factor widths {} / {} do not match {} singular values",
                u.cols(),
                v.cols(),
                r
            )));
        }
        if u.rows() != source_rows || v.rows() != source_cols {
            return Err(Error::Shape(format!(
                "factor heights {}x{} do not match source {}x{}",
                u.rows(),
                v.rows(),
                source_rows,
                source_cols
            )));
        }
        if r > source_rows.min(source_cols) {
            return Err(Error::Rank {
                requested: r,
                max: source_rows.min(source_cols),
            });
        }
        for w in s.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidMatrix("singular values not sorted".into()));
            }
        }
        if s.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidMatrix(
                "singular values must be finite and non-negative".into(),
            ));
        }
        for (m, name) in [(&u, "u"), (&v, "v")] {
            if orthogonality_defect(m) > ORTHO_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "{name} columns are not orthonormal within {ORTHO_TOL:e}"
                )));
            }
        }
        Ok(Self {
            u,
            s,
            v,
            source_rows,
            source_cols,
        })
    }

    fn new_unchecked(u: Matrix, s: Vec<f64>, v: Matrix, source_rows: usize, source_cols: usize) -> Self {
        Self {
            u,
            s,
            v,
            source_rows,
            source_cols,
        }
    }

    /// Left factor, `source_rows x r`.
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    /// Singular values, non-increasing.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// Right factor, `source_cols x r` (columns are right singular vectors).
    pub fn v(&self) -> &Matrix {
        &self.v
    }

    /// Number of kept singular values.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn source_cols(&self) -> usize {
        self.source_cols
    }
}

/// `||mᵀm - I||_F` for a matrix with notionally orthonormal columns.
pub fn orthogonality_defect(m: &Matrix) -> f64 {
    let r = m.cols();
    let mut sum = 0.0;
    for i in 0..r {
        for j in 0..r {
            let mut dot = 0.0;
            for row in 0..m.rows() {
                dot += m[(row, i)] * m[(row, j)];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            sum += (dot - target) * (dot - target);
        }
    }
    fmath::sqrt(sum)
}

/// Full (thin) SVD of a dense matrix: `w = u·diag(s)·vᵀ` with
/// `r = min(rows, cols)`.
///
/// One-sided Jacobi: rotate column pairs of a working copy until all pairs
/// are mutually orthogonal, read the singular values off as column norms.
/// Deterministic: identical input yields bitwise-identical factors.
pub fn svd(w: &Matrix) -> Result<SvdFactors> {
    w.validate_finite()?;
    let (m, n) = (w.rows(), w.cols());
    if m >= n {
        svd_tall(w)
    } else {
        // Wide input: decompose the transpose and swap the factors.
        let f = svd_tall(&w.transpose())?;
        let mut out = SvdFactors::new_unchecked(f.v, f.s, f.u, m, n);
        apply_sign_convention(&mut out);
        Ok(out)
    }
}

fn svd_tall(w: &Matrix) -> Result<SvdFactors> {
    let (m, n) = (w.rows(), w.cols());
    debug_assert!(m >= n);

    // Work on transposes so each column lives in one contiguous row.
    let mut bt = w.transpose(); // n x m; row j = column j of the working copy
    let mut vt = Matrix::identity(n); // row j = column j of V

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (app, aqq, apq) = gram_entries(&bt, p, q);
                if fmath::abs(apq) <= REL_OFF_TOL * fmath::sqrt(app * aqq) {
                    continue;
                }
                let (c, s) = jacobi_rotation(app, aqq, apq);
                rotate_rows(&mut bt, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
                rotated = true;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence { sweeps: MAX_SWEEPS });
    }

    // Column norms are the singular values.
    let mut s: Vec<f64> = (0..n)
        .map(|j| {
            let row = bt.row(j);
            fmath::sqrt(row.iter().map(|x| x * x).sum())
        })
        .collect();

    // Sort non-increasing; equal values keep their original order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
    let sorted_s: Vec<f64> = order.iter().map(|&j| s[j]).collect();
    s = sorted_s;

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        if s[new_j] > 0.0 {
            let inv = 1.0 / s[new_j];
            for i in 0..m {
                u[(i, new_j)] = bt[(old_j, i)] * inv;
            }
        }
        for i in 0..n {
            v[(i, new_j)] = vt[(old_j, i)];
        }
    }

    // Zero singular directions leave u columns empty; complete them into an
    // orthonormal set from canonical basis vectors, deterministically.
    for j in 0..n {
        if s[j] == 0.0 {
            complete_column(&mut u, j);
        }
    }

    let mut out = SvdFactors::new_unchecked(u, s, v, m, n);
    apply_sign_convention(&mut out);
    Ok(out)
}

#[inline]
fn gram_entries(bt: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let rp = bt.row(p);
    let rq = bt.row(q);
    let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
    for (&x, &y) in rp.iter().zip(rq.iter()) {
        app += x * x;
        aqq += y * y;
        apq += x * y;
    }
    (app, aqq, apq)
}

/// Rutishauser rotation zeroing the `(p, q)` Gram entry.
#[inline]
fn jacobi_rotation(app: f64, aqq: f64, apq: f64) -> (f64, f64) {
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + fmath::sqrt(1.0 + tau * tau))
    } else {
        -1.0 / (-tau + fmath::sqrt(1.0 + tau * tau))
    };
    let c = 1.0 / fmath::sqrt(1.0 + t * t);
    (c, t * c)
}

/// Apply the rotation to rows `p`, `q` (which hold columns of the working
/// matrices).
#[inline]
fn rotate_rows(mt: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let cols = mt.cols();
    let buf = mt.as_mut_slice();
    let (head, tail) = buf.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fill column `j` of `u` with a unit vector orthogonal to all other columns.
/// Picks the canonical basis vector with the largest residual after
/// projection (ties broken by lowest index), then re-orthogonalizes once.
fn complete_column(u: &mut Matrix, j: usize) {
    let m = u.rows();
    let r = u.cols();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cand in 0..m {
        let mut vec_: Vec<f64> = vec![0.0; m];
        vec_[cand] = 1.0;
        project_out(u, j, &mut vec_, r);
        let norm = fmath::sqrt(vec_.iter().map(|x| x * x).sum());
        if best.as_ref().map_or(true, |(bn, _)| norm > *bn) {
            best = Some((norm, vec_));
        }
    }
    let (norm, mut vec_) = best.expect("matrix has at least one row");
    debug_assert!(norm > 0.0, "cannot complete an orthonormal basis");
    for x in vec_.iter_mut() {
        *x /= norm;
    }
    // Second Gram-Schmidt pass for numerical orthogonality.
    project_out(u, j, &mut vec_, r);
    let norm = fmath::sqrt(vec_.iter().map(|x: &f64| x * x).sum());
    for (i, x) in vec_.iter().enumerate() {
        u[(i, j)] = x / norm;
    }
}

fn project_out(u: &Matrix, skip: usize, vec_: &mut [f64], r: usize) {
    for c in 0..r {
        if c == skip {
            continue;
        }
        let mut dot = 0.0;
        for (i, &x) in vec_.iter().enumerate() {
            dot += x * u[(i, c)];
        }
        if dot != 0.0 {
            for (i, x) in vec_.iter_mut().enumerate() {
                *x -= dot * u[(i, c)];
            }
        }
    }
}

/// For each column of `u`, make the entry of largest magnitude non-negative
/// (ties broken by lowest row index); flip the matching `v` column so the
/// product is unchanged.
fn apply_sign_convention(f: &mut SvdFactors) {
    for j in 0..f.s.len() {
        let mut best_row = 0;
        let mut best_abs = fmath::abs(f.u[(0, j)]);
        for i in 1..f.u.rows() {
            let a = fmath::abs(f.u[(i, j)]);
            if a > best_abs {
                best_abs = a;
                best_row = i;
            }
        }
        if f.u[(best_row, j)] < 0.0 {
            for i in 0..f.u.rows() {
                f.u[(i, j)] = -f.u[(i, j)];
            }
            for i in 0..f.v.rows() {
                f.v[(i, j)] = -f.v[(i, j)];
            }
        }
    }
}

/// Keep the first `k` singular values and the matching factor columns.
/// Source dimensions are unchanged. Fails when `k` is outside `1..=rank`.
pub fn truncate(f: &SvdFactors, k: usize) -> Result<SvdFactors> {
    let r = f.rank();
    if k == 0 || k > r {
        return Err(Error::Rank { requested: k, max: r });
    }
    let take_cols = |m: &Matrix| {
        let mut out = Matrix::zeros(m.rows(), k);
        for i in 0..m.rows() {
            for j in 0..k {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    };
    Ok(SvdFactors::new_unchecked(
        take_cols(&f.u),
        f.s[..k].to_vec(),
        take_cols(&f.v),
        f.source_rows,
        f.source_cols,
    ))
}

/// `u · diag(s) · vᵀ`, shaped `source_rows x source_cols`.
pub fn reconstruct(f: &SvdFactors) -> Matrix {
    compose_factors(&f.u, &f.s, &f.v)
}

/// Raw factor product `u · diag(s) · vᵀ` for arbitrary (possibly edited)
/// factor matrices. `v` holds right singular vectors as columns.
pub fn compose_factors(u: &Matrix, s: &[f64], v: &Matrix) -> Matrix {
    debug_assert_eq!(u.cols(), s.len());
    debug_assert_eq!(v.cols(), s.len());
    let scaled = u.scale_cols(s).expect("widths checked above");
    scaled
        .matmul(&v.transpose())
        .expect("widths checked above")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = rng.next_in_range(lo, hi);
            }
        }
        m
    }

    fn relative_frobenius_error(a: &Matrix, b: &Matrix) -> f64 {
        let denom = a.frobenius_norm().max(1e-300);
        a.frobenius_distance(b).unwrap() / denom
    }

    #[test]
    fn identity_decomposes_to_identity() {
        let f = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(f.s(), &[1.0, 1.0, 1.0]);
        assert_eq!(*f.u(), Matrix::identity(3));
        assert_eq!(*f.v(), Matrix::identity(3));
    }

    #[test]
    fn diagonal_singular_values_are_sorted_magnitudes() {
        let f = svd(&Matrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(f.s(), &[3.0, 1.0]);
    }

    #[test]
    fn seeded_64x48_reconstructs() {
        let mut rng = Rng::new(0x5eed_64_48);
        let w = random_matrix(&mut rng, 64, 48, -10.0, 10.0);
        let f = svd(&w).unwrap();
        assert!(relative_frobenius_error(&w, &reconstruct(&f)) <= 1e-10);
        assert!(orthogonality_defect(f.u()) <= 1e-10);
        assert!(orthogonality_defect(f.v()) <= 1e-10);
        assert_eq!(f.rank(), 48);
    }

    #[test]
    fn wide_matrix_reconstructs() {
        let mut rng = Rng::new(0x71de);
        let w = random_matrix(&mut rng, 12, 30, -5.0, 5.0);
        let f = svd(&w).unwrap();
        assert_eq!((f.u().rows(), f.u().cols()), (12, 12));
        assert_eq!((f.v().rows(), f.v().cols()), (30, 12));
        assert!(relative_frobenius_error(&w, &reconstruct(&f)) <= 1e-10);
        assert!(orthogonality_defect(f.u()) <= 1e-10);
        assert!(orthogonality_defect(f.v()) <= 1e-10);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut w = Matrix::zeros(2, 2);
        w[(1, 1)] = f64::INFINITY;
        assert!(matches!(svd(&w), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn full_rank_truncation_is_identity() {
        let mut rng = Rng::new(21);
        let w = random_matrix(&mut rng, 10, 6, -1.0, 1.0);
        let f = svd(&w).unwrap();
        let t = truncate(&f, f.rank()).unwrap();
        assert_eq!(f, t);
    }

    #[test]
    fn truncating_diag_3_1_to_rank_1() {
        let f = svd(&Matrix::from_diag(&[3.0, 1.0])).unwrap();
        let t = truncate(&f, 1).unwrap();
        assert_eq!(t.s(), &[3.0]);
        let rec = reconstruct(&t);
        assert!(rec.frobenius_distance(&Matrix::from_diag(&[3.0, 0.0])).unwrap() <= 1e-12);
    }

    #[test]
    fn truncate_rejects_out_of_range_rank() {
        let f = svd(&Matrix::identity(4)).unwrap();
        assert!(matches!(truncate(&f, 0), Err(Error::Rank { .. })));
        assert!(matches!(truncate(&f, 5), Err(Error::Rank { .. })));
    }

    #[test]
    fn eckart_young_truncation_error_32x32_k8() {
        let mut rng = Rng::new(0xec4a);
        let w = random_matrix(&mut rng, 32, 32, -10.0, 10.0);
        let f = svd(&w).unwrap();
        let t = truncate(&f, 8).unwrap();
        let err = w.frobenius_distance(&reconstruct(&t)).unwrap();
        let tail: f64 = f.s()[8..].iter().map(|x| x * x).sum();
        let expected = tail.sqrt();
        assert!(
            (err - expected).abs() <= 1e-8 * expected,
            "err {err} vs tail {expected}"
        );
    }

    #[test]
    fn zero_matrix_reconstructs_to_zero() {
        let w = Matrix::zeros(5, 3);
        let f = svd(&w).unwrap();
        assert_eq!(f.s(), &[0.0, 0.0, 0.0]);
        assert!(orthogonality_defect(f.u()) <= 1e-12);
        assert_eq!(reconstruct(&f), w);
    }

    #[test]
    fn zeroing_one_factor_entry_removes_exactly_its_rank_contribution() {
        let mut rng = Rng::new(77);
        let w = random_matrix(&mut rng, 6, 5, -2.0, 2.0);
        let f = svd(&w).unwrap();
        let (zi, zj) = (2, 1);
        let mut u = f.u().clone();
        let removed = u[(zi, zj)];
        u[(zi, zj)] = 0.0;
        let edited = compose_factors(&u, f.s(), f.v());
        // Direct product oracle: the difference is s_j * u_ij * v[:,j]^T in row zi.
        let mut oracle = reconstruct(&f);
        for c in 0..w.cols() {
            oracle[(zi, c)] -= f.s()[zj] * removed * f.v()[(c, zj)];
        }
        assert!(edited.frobenius_distance(&oracle).unwrap() <= 1e-12);
    }

    #[test]
    fn sign_convention_largest_entry_non_negative() {
        let mut rng = Rng::new(0x51f7);
        for trial in 0..20 {
            let rows = 2 + (trial % 7);
            let cols = 2 + (trial % 5);
            let w = random_matrix(&mut rng, rows, cols, -3.0, 3.0);
            let f = svd(&w).unwrap();
            for j in 0..f.rank() {
                let mut best = (0, f.u()[(0, j)].abs());
                for i in 1..rows {
                    let a = f.u()[(i, j)].abs();
                    if a > best.1 {
                        best = (i, a);
                    }
                }
                assert!(f.u()[(best.0, j)] >= 0.0, "column {j} violates convention");
            }
        }
    }

    #[test]
    fn svd_is_bitwise_deterministic() {
        let mut rng = Rng::new(0xdede);
        let w = random_matrix(&mut rng, 17, 13, -4.0, 4.0);
        let a = svd(&w).unwrap();
        let b = svd(&w).unwrap();
        assert_eq!(a.u().as_slice(), b.u().as_slice());
        assert_eq!(a.s(), b.s());
        assert_eq!(a.v().as_slice(), b.v().as_slice());
    }

    #[test]
    fn rank_one_matrix_keeps_one_nonzero_singular_value() {
        // Outer product UV^T: rank 1, remaining singular values ~0.
        let mut w = Matrix::zeros(4, 3);
        let col = [1.0, -2.0, 0.5, 3.0];
        let row = [2.0, 1.0, -1.0];
        for i in 0..4 {
            for j in 0..3 {
                w[(i, j)] = col[i] * row[j];
            }
        }
        let f = svd(&w).unwrap();
        assert!(f.s()[0] > 1.0);
        assert!(f.s()[1] <= 1e-12 * f.s()[0]);
        assert!(relative_frobenius_error(&w, &reconstruct(&f)) <= 1e-12);
        assert!(orthogonality_defect(f.u()) <= 1e-10);
    }
}
