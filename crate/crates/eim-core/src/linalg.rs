//! Small dense linear algebra: LU determinants and Cholesky factorization
//! for the exact Gaussian computations. Matrices are row-major slices.

use crate::error::BoundsError;

/// Determinant via LU decomposition with partial pivoting. Consumes the
/// matrix buffer.
pub fn lu_det(n: usize, a: &mut [f64]) -> f64 {
    assert_eq!(a.len(), n * n);
    let mut det = 1.0;
    for col in 0..n {
        // pivot
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            det = -det;
        }
        det *= a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
        }
    }
    det
}

/// Lower-triangular Cholesky factor L with A = L·Lᵀ, for a symmetric
/// positive-definite A.
pub fn cholesky(n: usize, a: &[f64]) -> Result<Vec<f64>, BoundsError> {
    assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(BoundsError::NotPositiveDefinite);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves A·x = b given the Cholesky factor L of A (forward then backward
/// substitution).
pub fn cholesky_solve(n: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// log det A from its Cholesky factor.
pub fn cholesky_log_det(n: usize, l: &[f64]) -> f64 {
    (0..n).map(|i| 2.0 * l[i * n + i].ln()).sum()
}
