//! Dense symmetric positive definite solves.

use crate::error::{Error, Result};

/// Largest condition estimate accepted before a system counts as singular.
pub(crate) const MAX_CONDITION: f64 = 1e14;

/// In-place Cholesky factorization `A = L Lᵀ` of a row-major `n × n`
/// matrix; the lower triangle receives `L`, the upper triangle is zeroed.
pub(crate) fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > max_diag * f64::EPSILON * n as f64) {
            let condition = if d > 0.0 { max_diag / d } else { f64::INFINITY };
            return Err(Error::Singular { condition });
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for i in 0..j {
            a[i * n + j] = 0.0;
        }
    }
    let condition = condition_estimate(a, n);
    if condition > MAX_CONDITION {
        return Err(Error::Singular { condition });
    }
    Ok(())
}

/// `(max L_ii / min L_ii)^2`, a cheap lower bound on the 2-norm condition
/// number of `L Lᵀ`.
pub(crate) fn condition_estimate(l: &[f64], n: usize) -> f64 {
    let (lo, hi) = (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        let d = l[i * n + i].abs();
        (lo.min(d), hi.max(d))
    });
    let r = hi / lo;
    r * r
}

/// Solves `L Lᵀ X = B` in place; `b` is row-major `n × n_rhs`.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64], n_rhs: usize) {
    for r in 0..n_rhs {
        for i in 0..n {
            let mut s = b[i * n_rhs + r];
            for k in 0..i {
                s -= l[i * n + k] * b[k * n_rhs + r];
            }
            b[i * n_rhs + r] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i * n_rhs + r];
            for k in i + 1..n {
                s -= l[k * n + i] * b[k * n_rhs + r];
            }
            b[i * n_rhs + r] = s / l[i * n + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn solves_small_system() {
        let a = vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let x_true = vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.0];
        let mut b = vec![0.0; 6];
        for i in 0..3 {
            for r in 0..2 {
                b[i * 2 + r] = (0..3).map(|k| a[i * 3 + k] * x_true[k * 2 + r]).sum();
            }
        }
        let mut l = a.clone();
        cholesky(&mut l, 3).unwrap();
        cholesky_solve(&l, 3, &mut b, 2);
        for (x, t) in b.iter().zip(&x_true) {
            assert!((x - t).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_reports_condition() {
        let mut a = vec![1.0, 1.0, 1.0, 1.0];
        assert!(matches!(cholesky(&mut a, 2), Err(Error::Singular { .. })));
    }
}
