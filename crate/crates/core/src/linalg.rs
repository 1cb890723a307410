//! Small dense kernels on lower Cholesky factors.
//!
//! Everything here works on `d × d` matrices with `d` at most a few dozen, so
//! plain loops over `nalgebra` storage are enough.

use nalgebra::{DMatrix, DVector};

use crate::error::{LtsError, Result};

/// Relative pivot threshold below which a normal matrix is treated as singular.
pub const PIVOT_TOL: f64 = 1e-10;

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// A pivot (the diagonal entry before the square root) smaller than
/// `PIVOT_TOL` times the largest diagonal entry of `m` is rejected.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    debug_assert_eq!(d, m.ncols());
    let max_diag = (0..d).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(LtsError::RankDeficient);
    }
    let floor = PIVOT_TOL * max_diag;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > floor) {
            return Err(LtsError::RankDeficient);
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L z = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let d = l.nrows();
    let mut z = b.clone();
    for i in 0..d {
        let mut s = z[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// Solves `Lᵀ z = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let d = l.nrows();
    let mut z = b.clone();
    for i in (0..d).rev() {
        let mut s = z[i];
        for k in (i + 1)..d {
            s -= l[(k, i)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// Solves `L Lᵀ z = b`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// In-place update of `L` so that afterwards `L Lᵀ = L₀ L₀ᵀ + x xᵀ`.
///
/// Uses Givens-type rotations on the lower factor, O(d²).
pub fn rank_one_update(l: &mut DMatrix<f64>, x: &DVector<f64>) -> Result<()> {
    let d = l.nrows();
    let mut x = x.clone();
    for k in 0..d {
        let lkk = l[(k, k)];
        let r = lkk.hypot(x[k]);
        if !(r > 0.0) || !r.is_finite() {
            return Err(LtsError::RankDeficient);
        }
        let c = r / lkk;
        let s = x[k] / lkk;
        l[(k, k)] = r;
        for i in (k + 1)..d {
            let lik = (l[(i, k)] + s * x[i]) / c;
            x[i] = c * x[i] - s * lik;
            l[(i, k)] = lik;
        }
    }
    Ok(())
}
