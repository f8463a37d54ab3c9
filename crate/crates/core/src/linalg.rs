//! Small dense routines on row-major `Vec<f64>` matrices.

use crate::error::{NpError, Result};

/// Lower Cholesky factor of a symmetric matrix, `None` if not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Cholesky of `a + jitter·I`, multiplying the jitter by 10 on failure up to `max_jitter`.
pub fn cholesky_jittered(a: &[f64], n: usize, jitter: f64, max_jitter: f64) -> Result<(Vec<f64>, f64)> {
    let mut eps = jitter;
    let mut work = a.to_vec();
    loop {
        for i in 0..n {
            work[i * n + i] = a[i * n + i] + eps;
        }
        if let Some(l) = cholesky(&work, n) {
            return Ok((l, eps));
        }
        eps *= 10.0;
        if eps > max_jitter * (1.0 + 1e-9) {
            return Err(NpError::Numeric(format!(
                "cholesky failed for {n}x{n} kernel matrix with jitter up to {max_jitter}"
            )));
        }
    }
}

/// Solve `l·x = b` for lower-triangular `l`.
pub fn solve_lower(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

/// Solve `lᵀ·x = b` for lower-triangular `l`.
pub fn solve_lower_transpose(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

/// `l·z` for lower-triangular `l`.
pub fn lower_matvec(l: &[f64], z: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum()).collect()
}
