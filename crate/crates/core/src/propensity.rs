//! Pooled logistic regression for the treatment propensity `P(A = 1 | H)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelIndexSet};
use crate::error::{PegError, Result};
use crate::linalg::sup_norm;

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
/// Linear predictors beyond this magnitude are treated as separation.
const MAX_ETA: f64 = 15.0;

/// A fitted propensity model with per-session fitted probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    pub beta: Vec<f64>,
    pub columns: ModelIndexSet,
    /// Fitted `e_ij`, one vector per subject in dataset order.
    pub fitted: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Log-likelihood after each accepted Newton step, starting at `beta = 0`.
    pub loglik_trace: Vec<f64>,
}

impl PropensityModel {
    pub fn fitted_for(&self, subject: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.fitted[subject])
    }

    /// Propensities fixed to given values, mainly for tests and oracles.
    pub fn from_fitted(fitted: Vec<Vec<f64>>) -> Self {
        PropensityModel {
            beta: Vec::new(),
            columns: ModelIndexSet::intercept_only(),
            fitted,
            iterations: 0,
            loglik_trace: Vec::new(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn loglik(x: &DMatrix<f64>, a: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(a.iter())
        .map(|(&t, &y)| {
            // log(1 + e^t) computed stably
            let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            y * t - softplus
        })
        .sum()
}

/// Maximum-likelihood pooled logistic fit by Newton-Raphson with step halving.
pub fn fit_propensity(d: &Dataset, columns: &ModelIndexSet) -> Result<PropensityModel> {
    if columns.indices().iter().any(|&c| c >= d.k()) {
        return Err(PegError::InvalidParameter(format!(
            "propensity columns {:?} exceed K = {}",
            columns.indices(),
            d.k()
        )));
    }
    let (x, a) = d.pooled(columns);
    let nt = x.nrows() as f64;
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut ll = loglik(&x, &a, &beta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    loop {
        let eta = &x * &beta;
        let prob = eta.map(sigmoid);
        let grad = x.tr_mul(&(&a - &prob));
        if sup_norm(grad.iter()) / nt < GRAD_TOL {
            break;
        }
        if iterations == MAX_ITER {
            return Err(PegError::PropensityNotConverged { iterations });
        }
        let mut xw = x.clone();
        for (r, pr) in prob.iter().enumerate() {
            let w = pr * (1.0 - pr);
            xw.row_mut(r).scale_mut(w);
        }
        let info = x.tr_mul(&xw);
        let chol = info.cholesky().ok_or_else(|| {
            PegError::RankDeficient(format!(
                "propensity design on columns {:?} is not of full column rank",
                columns.indices()
            ))
        })?;
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * scale;
            if cand == beta {
                break;
            }
            let cand_ll = loglik(&x, &a, &cand);
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        trace.push(ll);
        let max_eta = sup_norm((&x * &beta).iter());
        if max_eta > MAX_ETA {
            return Err(PegError::Separation { max_eta });
        }
        if !accepted {
            // no ascent direction left at machine precision
            break;
        }
    }

    let eta = &x * &beta;
    let max_eta = sup_norm(eta.iter());
    if max_eta > MAX_ETA {
        return Err(PegError::Separation { max_eta });
    }
    let mut fitted = Vec::with_capacity(d.n());
    let mut r = 0;
    for s in d.subjects() {
        let j = s.sessions();
        fitted.push((r..r + j).map(|i| sigmoid(eta[i])).collect());
        r += j;
    }
    Ok(PropensityModel {
        beta: beta.iter().cloned().collect(),
        columns: columns.clone(),
        fitted,
        iterations,
        loglik_trace: trace,
    })
}
