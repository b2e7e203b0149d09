//! Cholesky factorization with a bounded jitter policy and row/column appends.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter for the first retry, scaled by the kernel variance.
pub const JITTER_START: f64 = 1e-10;
/// Number of jittered retries after the plain attempt fails.
pub const JITTER_ATTEMPTS: usize = 6;

/// A lower Cholesky factor and the diagonal jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct Factor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

/// Factor `a + jitter·I`, trying no jitter first and then
/// `JITTER_START·scale`, growing tenfold per attempt.
pub fn cholesky_jittered(a: &DMatrix<f64>, scale: f64) -> Result<Factor> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Factor { l: DMatrix::zeros(0, 0), jitter: 0.0 });
    }
    if let Some(c) = a.clone().cholesky() {
        return Ok(Factor { l: c.unpack(), jitter: 0.0 });
    }
    let mut jitter = JITTER_START * scale;
    for _ in 0..JITTER_ATTEMPTS {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(c) = b.cholesky() {
            return Ok(Factor { l: c.unpack(), jitter });
        }
        jitter *= 10.0;
    }
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let dmax = diag.iter().cloned().fold(f64::MIN, f64::max);
    let dmin = diag.iter().cloned().fold(f64::MAX, f64::min);
    Err(Error::Numerical(format!(
        "matrix of size {n} not positive definite after jitter {:.3e}; diagonal range [{dmin:.3e}, {dmax:.3e}]",
        jitter / 10.0
    )))
}

/// Append one row/column to a lower Cholesky factor.
///
/// `cross` holds the new column's off-diagonal entries and `diag` its diagonal.
/// Fails when the new pivot squared falls below `min_pivot`.
pub fn append(
    l: &DMatrix<f64>,
    cross: &DVector<f64>,
    diag: f64,
    min_pivot: f64,
) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let v = if n == 0 {
        DVector::zeros(0)
    } else {
        solve_lower(l, cross)
    };
    let d2 = diag - v.norm_squared();
    if !(d2 > min_pivot) {
        return Err(Error::Numerical(format!(
            "rank-one extension pivot {d2:.3e} below threshold {min_pivot:.3e}"
        )));
    }
    let mut out = DMatrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(l);
    for j in 0..n {
        out[(n, j)] = v[j];
    }
    out[(n, n)] = d2.sqrt();
    Ok(out)
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Solve `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_t(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// Solve `L X = B` column-wise.
pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}
