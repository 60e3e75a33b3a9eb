//! Naive Wald intervals from the sandwich covariance of the penalized
//! estimator, ignoring the selection step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::{mm_weights, PenalizedFit};
use super::moments::{theta_coords, MomentCache};
use crate::data::Dataset;
use crate::error::{PegError, Result};
use crate::interval::CoordinateInterval;
use crate::linalg::{lu_inverse, normal_two_sided_quantile, submatrix};
use crate::propensity::PropensityModel;

/// Covariance over `(delta, psi_B)` in the order given by `coords`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichEstimate {
    pub coords: Vec<usize>,
    pub cov: Vec<Vec<f64>>,
}

impl SandwichEstimate {
    pub fn matrix(&self) -> DMatrix<f64> {
        let p = self.coords.len();
        DMatrix::from_fn(p, p, |a, b| self.cov[a][b])
    }
}

pub fn sandwich_covariance(d: &Dataset, pm: &PropensityModel, fit: &PenalizedFit) -> Result<SandwichEstimate> {
    sandwich_covariance_cached(&MomentCache::new(d, pm)?, fit)
}

/// `(W_B + Sigma)^-1 I_B (W_B + Sigma)^-T / n`.
pub fn sandwich_covariance_cached(cache: &MomentCache, fit: &PenalizedFit) -> Result<SandwichEstimate> {
    let k = cache.k();
    let theta = fit.theta();
    let coords = theta_coords(k, &fit.selected);
    let mm = cache.assemble(&fit.corr, fit.sigma2)?;
    let pen = mm_weights(&theta, k, &fit.penalty, 1e-6);
    let bread = submatrix(&mm.w, &coords) + DMatrix::from_diagonal(&DVector::from_fn(coords.len(), |i, _| pen[coords[i]]));
    let bread_inv = lu_inverse(&bread)
        .map_err(|_| PegError::Singular("sandwich bread matrix".into()))?;
    let scores = cache.scores(&theta, &fit.corr, fit.sigma2)?.select_columns(&coords);
    let n = cache.n() as f64;
    let meat = scores.tr_mul(&scores) / n;
    let cov = &bread_inv * meat * bread_inv.transpose() / n;
    let cov = (&cov + cov.transpose()) * 0.5;
    let p = coords.len();
    Ok(SandwichEstimate {
        cov: (0..p).map(|a| (0..p).map(|b| cov[(a, b)]).collect()).collect(),
        coords,
    })
}

/// `estimate ± z_{1-alpha/2} se`.
pub fn wald_interval(coordinate: usize, estimate: f64, se: f64, alpha: f64) -> CoordinateInterval {
    CoordinateInterval::symmetric(coordinate, estimate, normal_two_sided_quantile(alpha) * se)
}

/// Wald intervals for every selected blip coefficient.
pub fn sandwich_ci(d: &Dataset, pm: &PropensityModel, fit: &PenalizedFit, alpha: f64) -> Result<Vec<CoordinateInterval>> {
    sandwich_ci_cached(&MomentCache::new(d, pm)?, fit, alpha)
}

pub fn sandwich_ci_cached(cache: &MomentCache, fit: &PenalizedFit, alpha: f64) -> Result<Vec<CoordinateInterval>> {
    check_alpha(alpha)?;
    let est = sandwich_covariance_cached(cache, fit)?;
    let k = fit.k();
    Ok(fit
        .selected
        .indices()
        .iter()
        .enumerate()
        .map(|(pos, &m)| {
            let var = est.cov[k + pos][k + pos].max(0.0);
            wald_interval(m, fit.psi[m], var.sqrt(), alpha)
        })
        .collect())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(PegError::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}
