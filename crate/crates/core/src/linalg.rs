//! Dense small-matrix numerics: exponential, Lyapunov equation, spectra and
//! single-input pole placement.
//!
//! Every matrix in this crate is at most a few dozen entries on a side, so the
//! routines favour directness over asymptotic cost.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default strict-stability margin used by [`is_hurwitz`].
pub const STAB_EPS: f64 = 1e-9;
/// Default tolerance used by [`has_eigenvalue_minus_ksq_pisq`].
pub const SPECTRUM_TOL: f64 = 1e-8;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

fn ensure_square(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Build a matrix from row slices. Panics on ragged input; intended for
/// literals in tests and bundled scenarios.
pub fn from_rows(rows: &[&[f64]]) -> Matrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    Matrix::from_fn(r, c, |i, j| {
        assert_eq!(rows[i].len(), c, "ragged matrix literal");
        rows[i][j]
    })
}

pub fn one_norm(m: &Matrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring around a degree-13 Padé
/// approximant (nalgebra's implementation).
pub fn mat_exp(m: &Matrix) -> Result<Matrix> {
    ensure_square(m)?;
    ensure_finite(m, "mat_exp input")?;
    let out = m.clone().exp();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { norm: one_norm(m) });
    }
    Ok(out)
}

/// All eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    ensure_square(m)?;
    ensure_finite(m, "eigenvalue input")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or(Error::EigenSolver)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn max_real_part(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue has real part below `-eps`.
pub fn is_hurwitz_with(m: &Matrix, eps: f64) -> Result<bool> {
    Ok(max_real_part(m)? < -eps)
}

pub fn is_hurwitz(m: &Matrix) -> Result<bool> {
    is_hurwitz_with(m, STAB_EPS)
}

/// Returns the first `k` in `0..=k_max` for which some eigenvalue of `m`
/// lies within `tol` of `-k^2 pi^2`.
pub fn find_eigenvalue_minus_ksq_pisq(m: &Matrix, k_max: usize, tol: f64) -> Result<Option<usize>> {
    let eig = eigenvalues(m)?;
    for k in 0..=k_max {
        let target = -((k * k) as f64) * std::f64::consts::PI.powi(2);
        if eig.iter().any(|z| (z - Complex64::new(target, 0.0)).norm() <= tol) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

pub fn has_eigenvalue_minus_ksq_pisq(m: &Matrix, k_max: usize) -> Result<bool> {
    if k_max < 1 {
        return Err(Error::InvalidParameter("k_max must be at least 1".into()));
    }
    Ok(find_eigenvalue_minus_ksq_pisq(m, k_max, SPECTRUM_TOL)?.is_some())
}

/// Solve `P A + A^T P + Q = 0` by Kronecker vectorisation.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    ensure_square(a)?;
    ensure_square(q)?;
    if a.nrows() != q.nrows() {
        return Err(Error::Dimension(format!(
            "Lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let max_re = max_real_part(a)?;
    if max_re >= -STAB_EPS {
        return Err(Error::NotHurwitz {
            what: "Lyapunov matrix",
            max_re,
        });
    }
    let n = a.nrows();
    let at = a.transpose();
    let eye = Matrix::identity(n, n);
    // column-major vec(): vec(A^T P) = (I kron A^T) vec(P), vec(P A) = (A^T kron I) vec(P)
    let lhs = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_iterator(n * n, q.iter().copied());
    let sol = lhs.lu().solve(&rhs).ok_or(Error::Singular {
        name: "Lyapunov operator",
        cond: f64::INFINITY,
    })?;
    let p = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse with a condition-number gate.
pub fn checked_inverse(m: &Matrix, name: &'static str) -> Result<(Matrix, f64)> {
    ensure_square(m)?;
    let cond = condition_number(m);
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::Singular { name, cond });
    }
    let inv = m.clone().try_inverse().ok_or(Error::Singular { name, cond })?;
    Ok((inv, cond))
}

pub fn controllability_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut out = Matrix::zeros(n, n * b.ncols());
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * b.ncols()), (n, b.ncols())).copy_from(&blk);
        blk = a * &blk;
    }
    out
}

pub fn numerical_rank(m: &Matrix) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = max * 1e-10 * (m.nrows().max(m.ncols()) as f64);
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn is_controllable(a: &Matrix, b: &Matrix) -> bool {
    numerical_rank(&controllability_matrix(a, b)) == a.nrows()
}

/// Monic polynomial with the given roots, coefficients lowest degree first.
/// The root list must be closed under conjugation.
pub fn poly_from_roots(roots: &[Complex64]) -> Result<Vec<f64>> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * r;
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::InvalidParameter(
            "pole list is not closed under complex conjugation".into(),
        ));
    }
    Ok(coeffs.iter().map(|c| c.re).collect())
}

/// Evaluate a polynomial (lowest degree first) at a square matrix.
pub fn poly_at_matrix(coeffs: &[f64], a: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut acc = Matrix::zeros(n, n);
    for &c in coeffs.iter().rev() {
        acc = &acc * a + Matrix::identity(n, n) * c;
    }
    acc
}

fn ackermann(a: &Matrix, b: &Matrix, poles: &[Complex64]) -> Result<Matrix> {
    let n = a.nrows();
    let ctrb_inv = controllability_matrix(a, b)
        .try_inverse()
        .ok_or(Error::Uncontrollable("A, B"))?;
    let p = poly_from_roots(poles)?;
    let last_row = Matrix::from_row_slice(1, n, ctrb_inv.row(n - 1).transpose().as_slice());
    Ok(-(last_row * poly_at_matrix(&p, a)))
}

/// Single-input pole placement by Ackermann's formula, returning the row `K`
/// such that `A + B K` has the requested spectrum.
///
/// An uncontrollable pair is accepted only when its uncontrollable modes
/// already appear in `poles`; the remaining poles are placed on the
/// controllable subspace.
pub fn place_poles(a: &Matrix, b: &Matrix, poles: &[Complex64]) -> Result<Matrix> {
    ensure_square(a)?;
    let n = a.nrows();
    if b.nrows() != n || b.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "place_poles expects B as {n}x1, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if poles.len() != n {
        return Err(Error::Dimension(format!(
            "{} poles requested for a {n}-dimensional system",
            poles.len()
        )));
    }
    let ctrb = controllability_matrix(a, b);
    let rank = numerical_rank(&ctrb);
    if rank == n {
        return ackermann(a, b, poles);
    }
    if rank == 0 {
        return Err(Error::Uncontrollable("A, B"));
    }

    // Kalman decomposition with an orthonormal basis whose leading columns
    // span the controllable subspace.
    let svd = ctrb.svd(true, false);
    let t = svd.u.ok_or(Error::EigenSolver)?;
    let at = t.transpose() * a * &t;
    let bt = t.transpose() * b;
    let a11 = at.view((0, 0), (rank, rank)).into_owned();
    let a22 = at.view((rank, rank), (n - rank, n - rank)).into_owned();
    let b1 = bt.view((0, 0), (rank, 1)).into_owned();

    let mut remaining: Vec<Complex64> = poles.to_vec();
    for z in eigenvalues(&a22)? {
        let tol = 1e-6 * z.norm().max(1.0);
        let hit = remaining
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - z).norm()))
            .filter(|&(_, d)| d <= tol)
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match hit {
            Some((i, _)) => {
                remaining.swap_remove(i);
            }
            None => return Err(Error::Uncontrollable("A, B")),
        }
    }
    let k1 = ackermann(&a11, &b1, &remaining)?;
    let mut kt = Matrix::zeros(1, n);
    kt.view_mut((0, 0), (1, rank)).copy_from(&k1);
    Ok(kt * t.transpose())
}

/// Dual placement: returns the column `L` such that `A + L C` has the
/// requested spectrum (`C` a single row).
pub fn place_poles_dual(a: &Matrix, c: &Matrix, poles: &[Complex64]) -> Result<Matrix> {
    Ok(place_poles(&a.transpose(), &c.transpose(), poles)?.transpose())
}
