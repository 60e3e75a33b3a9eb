//! Nuisance weights `w` with `w' I_nn ~ I_kn` for one blip coordinate `k`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::simplex;
use crate::error::{PegError, Result};
use crate::linalg::{lu_solve, sup_norm};

pub const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 100_000;
/// Slack allowed in the KKT and feasibility assertions.
pub const KKT_TOL: f64 = 1e-6;
pub const DANTZIG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMethod {
    Full,
    Lasso,
    Dantzig,
}

impl WeightMethod {
    pub fn name(self) -> &'static str {
        match self {
            WeightMethod::Full => "full",
            WeightMethod::Lasso => "lasso",
            WeightMethod::Dantzig => "dantzig",
        }
    }
}

impl fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightMethod {
    type Err = PegError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(WeightMethod::Full),
            "lasso" => Ok(WeightMethod::Lasso),
            "dantzig" => Ok(WeightMethod::Dantzig),
            _ => Err(PegError::InvalidParameter(format!(
                "unknown weight method `{s}`; expected full, lasso or dantzig"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    /// Weights on the other `K - 1` blip coordinates, in increasing order.
    pub w: Vec<f64>,
    pub method: WeightMethod,
    pub lambda_w: f64,
    pub target: usize,
}

impl WeightEstimate {
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }
}

/// Indices of the nuisance coordinates `nu_k = {0..K} \ {k}`.
pub fn nuisance(k: usize, dim: usize) -> Vec<usize> {
    (0..dim).filter(|&j| j != k).collect()
}

/// Splits `I` into `(I_nn, I_nk)` for target `k`.
pub fn partition(info: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let nu = nuisance(k, info.nrows());
    let q = DMatrix::from_fn(nu.len(), nu.len(), |r, c| info[(nu[r], nu[c])]);
    let b = DVector::from_fn(nu.len(), |r, _| info[(nu[r], k)]);
    (q, b)
}

/// `w = I_nn^-1 I_nk`.
pub fn full_weights(q: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if q.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    lu_solve(q, b).map_err(|_| {
        PegError::Singular("nuisance information is singular; use the lasso or dantzig weights".into())
    })
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `max_j | (Q w - b)_j |`.
pub fn gradient_sup(q: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> f64 {
    sup_norm((q * w - b).iter())
}

/// KKT conditions of `1/2 w'Qw - w'b + lambda |w|_1`: `|Qw - b|_j <= lambda`
/// everywhere and `(Qw - b)_j = -lambda sign(w_j)` on the support.
pub fn lasso_kkt(q: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>, lambda: f64, tol: f64) -> bool {
    let grad = q * w - b;
    grad.iter().zip(w.iter()).all(|(g, wj)| {
        if *wj != 0.0 {
            (g + lambda * wj.signum()).abs() <= tol
        } else {
            g.abs() <= lambda + tol
        }
    })
}

/// Exact solve on the support with fixed signs, kept when it still satisfies
/// the KKT conditions.
fn polish(q: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let qa = DMatrix::from_fn(active.len(), active.len(), |r, c| q[(active[r], active[c])]);
    let ba = DVector::from_fn(active.len(), |r, _| b[active[r]] - lambda * w[active[r]].signum());
    let sol = lu_solve(&qa, &ba).ok()?;
    let mut out = DVector::zeros(w.len());
    for (r, &j) in active.iter().enumerate() {
        if sol[r].signum() != w[j].signum() {
            return None;
        }
        out[j] = sol[r];
    }
    lasso_kkt(q, b, &out, lambda, 1e-10).then_some(out)
}

/// Coordinate descent on `1/2 w'Qw - w'b + lambda |w|_1`, then an exact solve
/// on the support. Errors when the KKT check fails.
pub fn lasso_weights(q: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let m = b.len();
    let mut w = DVector::zeros(m);
    let mut grad = -b.clone(); // Q w - b
    let mut converged = false;
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0_f64;
        for j in 0..m {
            let qjj = q[(j, j)];
            let old = w[j];
            let new = if qjj > 0.0 {
                soft(qjj * old - grad[j], lambda) / qjj
            } else {
                0.0
            };
            if new != old {
                let d = new - old;
                grad.axpy(d, &q.column(j), 1.0);
                w[j] = new;
                max_change = max_change.max(d.abs() * qjj.sqrt().max(1.0));
            }
        }
        if max_change < LASSO_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PegError::NoConvergence);
    }
    if let Some(p) = polish(q, b, &w, lambda) {
        w = p;
    }
    if !lasso_kkt(q, b, &w, lambda, KKT_TOL) {
        return Err(PegError::NoConvergence);
    }
    Ok(w)
}

/// `min |w|_1 s.t. |I_nk - I_nn w|_inf <= lambda` as a linear program in
/// `w = u - v`, `u, v >= 0`.
pub fn dantzig_weights(q: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let m = b.len();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    if sup_norm(b.iter()) <= lambda {
        return Ok(DVector::zeros(m));
    }
    // Q(u - v) <= b + lambda and -Q(u - v) <= lambda - b
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    let mut rhs = vec![0.0; 2 * m];
    for r in 0..m {
        for c in 0..m {
            a[(r, c)] = q[(r, c)];
            a[(r, m + c)] = -q[(r, c)];
            a[(m + r, c)] = -q[(r, c)];
            a[(m + r, m + c)] = q[(r, c)];
        }
        rhs[r] = b[r] + lambda;
        rhs[m + r] = lambda - b[r];
    }
    let x = simplex::minimize(&vec![1.0; 2 * m], &a, &rhs)?;
    let w = DVector::from_fn(m, |j, _| x[j] - x[m + j]);
    let viol = gradient_sup(q, b, &w);
    if viol > lambda + DANTZIG_TOL {
        return Err(PegError::Infeasible(format!(
            "dantzig weights violate the constraint by {:.3e}",
            viol - lambda
        )));
    }
    Ok(w)
}

/// Weights for coordinate `k` from a `K x K` information matrix.
pub fn weights_from_info(info: &DMatrix<f64>, k: usize, method: WeightMethod, lambda_w: f64) -> Result<WeightEstimate> {
    if k >= info.nrows() {
        return Err(PegError::Dimension(format!("coordinate {k} out of range")));
    }
    if !(lambda_w >= 0.0) {
        return Err(PegError::InvalidParameter(format!("lambda_w = {lambda_w} must be >= 0")));
    }
    let (q, b) = partition(info, k);
    let w = match method {
        WeightMethod::Full => full_weights(&q, &b)?,
        WeightMethod::Lasso => lasso_weights(&q, &b, lambda_w)?,
        WeightMethod::Dantzig => dantzig_weights(&q, &b, lambda_w)?,
    };
    Ok(WeightEstimate {
        w: w.iter().cloned().collect(),
        method,
        lambda_w: if method == WeightMethod::Full { 0.0 } else { lambda_w },
        target: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.3, 0.6, 1.5, 0.4, 0.3, 0.4, 1.0])
    }

    #[test]
    fn full_matches_two_by_two_solve() {
        let w = weights_from_info(&toy(), 0, WeightMethod::Full, 0.0).unwrap();
        // [1.5 0.4; 0.4 1.0] w = [0.6; 0.3], det = 1.34
        let expect = [(0.6 * 1.0 - 0.4 * 0.3) / 1.34, (1.5 * 0.3 - 0.4 * 0.6) / 1.34];
        assert!((w.w[0] - expect[0]).abs() < 1e-14 && (w.w[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn lasso_zero_penalty_is_full() {
        for k in 0..3 {
            let full = weights_from_info(&toy(), k, WeightMethod::Full, 0.0).unwrap();
            let lasso = weights_from_info(&toy(), k, WeightMethod::Lasso, 0.0).unwrap();
            for (a, b) in full.w.iter().zip(&lasso.w) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dantzig_large_lambda_is_zero() {
        let info = toy();
        let (_, b) = partition(&info, 1);
        let w = weights_from_info(&info, 1, WeightMethod::Dantzig, sup_norm(b.iter())).unwrap();
        assert!(w.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_full_is_an_error() {
        let info = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 1.0, 0.5, 1.0, 1.0]);
        let err = weights_from_info(&info, 0, WeightMethod::Full, 0.0).unwrap_err();
        assert!(err.to_string().contains("lasso"));
        assert!(weights_from_info(&info, 0, WeightMethod::Lasso, 0.05).is_ok());
        assert!(weights_from_info(&info, 0, WeightMethod::Dantzig, 0.05).is_ok());
    }

    #[test]
    fn decorrelation_at_full_weights() {
        let info = toy();
        let (q, b) = partition(&info, 2);
        let w = full_weights(&q, &b).unwrap();
        assert!(gradient_sup(&q, &b, &w) < 1e-8);
    }

    fn psd(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0..1.0f64, (m + 2) * m).prop_map(move |v| {
            let x = DMatrix::from_vec(m + 2, m, v);
            x.transpose() * x / (m + 2) as f64
        })
    }

    proptest! {
        #[test]
        fn lasso_satisfies_kkt(info in psd(6), k in 0usize..6, frac in 0.0..1.0f64) {
            let (q, b) = partition(&info, k);
            let lambda = frac * sup_norm(b.iter());
            let w = lasso_weights(&q, &b, lambda).unwrap();
            prop_assert!(lasso_kkt(&q, &b, &w, lambda, KKT_TOL));
        }

        #[test]
        fn dantzig_is_feasible_and_no_larger_than_full(info in psd(5), k in 0usize..5, frac in 0.01..1.0f64) {
            let (q, b) = partition(&info, k);
            let lambda = frac * sup_norm(b.iter());
            let w = dantzig_weights(&q, &b, lambda).unwrap();
            prop_assert!(gradient_sup(&q, &b, &w) <= lambda + DANTZIG_TOL);
            if let Ok(full) = full_weights(&q, &b) {
                let l1 = |v: &DVector<f64>| v.iter().map(|x| x.abs()).sum::<f64>();
                prop_assert!(l1(&w) <= l1(&full) + 1e-8);
            }
        }
    }
}
