//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PegError, Result};

/// Solves `a x = b` by LU with partial pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(PegError::Dimension(format!(
            "cannot solve {}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| PegError::Singular("LU factorization hit a zero pivot".into()))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(PegError::Singular("solution is not finite".into()))
    }
}

/// Dense inverse via LU.
pub fn lu_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| PegError::Singular("matrix is not invertible".into()))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(PegError::Singular("inverse is not finite".into()))
    }
}

/// Ratio of the largest to the smallest singular value (infinite when singular).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    a.nrows() == a.ncols() && a.clone().cholesky().is_some()
}

pub fn sup_norm<'a, I: IntoIterator<Item = &'a f64>>(v: I) -> f64 {
    v.into_iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn l1_norm<'a, I: IntoIterator<Item = &'a f64>>(v: I) -> f64 {
    v.into_iter().map(|x| x.abs()).sum()
}

/// Upper `1 - alpha/2` standard-normal quantile.
pub fn normal_two_sided_quantile(alpha: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    std.inverse_cdf(1.0 - alpha / 2.0)
}

/// Rows/columns of `a` at `idx`, in order.
pub fn submatrix(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// `n` log-spaced points from `lo` to `hi` inclusive, ascending.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_quantile_matches_table() {
        assert!((normal_two_sided_quantile(0.05) - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn log_space_endpoints() {
        let g = log_space(0.01, 2.0, 30);
        assert_eq!(g.len(), 30);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[29] - 2.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn singular_system_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(lu_solve(&a, &b).is_err());
        assert!(condition_number(&a) > 1e15);
    }
}
