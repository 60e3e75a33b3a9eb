//! Choice of the SCAD tuning parameter by an information criterion.
//!
//! The criterion is `sum_i r_i' V_ref^-1 r_i + log(n) df` with
//! `df = K + #{m >= 1 : |psi_m| >= 0.001} + 1`. Both the weighting matrix
//! `V_ref` and the outcome mean come from one unpenalized fit with the same
//! working structure and are held fixed across the grid. The residual uses the
//! propensity-centred treatment, `r = y - m_ref(H) - (a - e) h' psi(lambda)`
//! with `m_ref(H) = h' delta_ref + e h' psi_ref`, so that it is smallest near
//! the unpenalized blip estimate even when the treatment-free model is wrong.
//! Plain residuals `y - h' delta - a h' psi` can shrink when a biased blip
//! absorbs treatment-free misfit, which rewards over-penalized fits.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::fit::{initial_estimate, penalized_g_fit_cached, FitControls, PenalizedFit};
use super::moments::MomentCache;
use super::scad::{ScadPenalty, DEFAULT_A};
use crate::correlation::{CorrKind, WorkingCorrelation};
use crate::data::Dataset;
use crate::error::{PegError, Result};
use crate::linalg::log_space;
use crate::par::*;
use crate::propensity::PropensityModel;

pub const DEFAULT_GRID_LEN: usize = 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningResult {
    pub lambda_star: f64,
    pub grid: Vec<f64>,
    /// Criterion per grid point; `None` for fits that did not converge.
    pub dric: Vec<Option<f64>>,
    pub fits: Vec<PenalizedFit>,
    pub best: usize,
    pub reference_sigma2: f64,
    pub reference_corr: WorkingCorrelation,
}

impl TuningResult {
    pub fn best_fit(&self) -> &PenalizedFit {
        &self.fits[self.best]
    }
}

/// 30 log-spaced values on `[0.01, 2] * sigma * sqrt(log K / n)`.
pub fn default_grid(sigma: f64, k: usize, n: usize) -> Vec<f64> {
    let scale = sigma * ((k.max(2) as f64).ln() / n as f64).sqrt();
    log_space(0.01 * scale, 2.0 * scale, DEFAULT_GRID_LEN)
}

/// Index of the smallest finite value; ties go to the later (larger-lambda)
/// entry of an ascending grid.
pub fn argmin_prefer_larger(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if v.is_finite() && best.is_none_or(|(_, b)| v <= b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Weighted residual sum `sum_i r_i' V^-1 r_i` of the centred residuals.
pub fn weighted_rss(
    cache: &MomentCache,
    reference: &DVector<f64>,
    theta: &DVector<f64>,
    corr: &WorkingCorrelation,
    sigma2: f64,
) -> Result<f64> {
    let counts = cache.session_counts();
    let rinv = corr.inverses(&counts)?;
    Ok(cache
        .centered_residuals(reference, theta)
        .iter()
        .map(|e| {
            let ri = rinv[e.len()].as_ref().expect("inverse materialized");
            (e.transpose() * ri * e)[(0, 0)] / sigma2
        })
        .sum())
}

/// Fits every grid value and returns the criterion minimizer.
pub fn tune_lambda(
    d: &Dataset,
    pm: &PropensityModel,
    kind: CorrKind,
    grid: Option<&[f64]>,
    controls: &FitControls,
) -> Result<TuningResult> {
    let cache = MomentCache::new(d, pm)?;
    tune_lambda_cached(&cache, kind, grid, controls)
}

pub fn tune_lambda_cached(
    cache: &MomentCache,
    kind: CorrKind,
    grid: Option<&[f64]>,
    controls: &FitControls,
) -> Result<TuningResult> {
    let init = initial_estimate(cache)?;
    let reference = penalized_g_fit_cached(cache, kind, &ScadPenalty::new(0.0, DEFAULT_A)?, controls, &init)?;
    let grid: Vec<f64> = match grid {
        Some(g) => {
            let mut g = g.to_vec();
            g.sort_by(f64::total_cmp);
            g
        }
        None => default_grid(reference.sigma2.sqrt(), cache.k(), cache.n()),
    };
    if grid.is_empty() {
        return Err(PegError::EmptyGrid);
    }
    let fits: Vec<Result<PenalizedFit>> = grid
        .par_iter()
        .map(|&lambda| {
            penalized_g_fit_cached(cache, kind, &ScadPenalty::new(lambda, DEFAULT_A)?, controls, &init)
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let log_n = (cache.n() as f64).ln();
    let ref_theta = reference.theta();
    let dric = fits
        .iter()
        .map(|f| {
            if !f.converged {
                return Ok(None);
            }
            let rss = weighted_rss(cache, &ref_theta, &f.theta(), &reference.corr, reference.sigma2)?;
            let df = (cache.k() + f.selected_modifiers() + 1) as f64;
            Ok(Some(rss + log_n * df))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = argmin_prefer_larger(&dric).ok_or(PegError::NoConvergence)?;
    Ok(TuningResult {
        lambda_star: grid[best],
        grid,
        dric,
        fits,
        best,
        reference_sigma2: reference.sigma2,
        reference_corr: reference.corr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_larger_lambda() {
        assert_eq!(argmin_prefer_larger(&[Some(2.0), Some(1.0), Some(1.0), Some(3.0)]), Some(2));
        assert_eq!(argmin_prefer_larger(&[Some(1.0)]), Some(0));
        assert_eq!(argmin_prefer_larger(&[None, None]), None);
        assert_eq!(argmin_prefer_larger(&[None, Some(5.0), None]), Some(1));
    }

    #[test]
    fn default_grid_scale() {
        let g = default_grid(1.0, 20, 1200);
        let s = (20f64.ln() / 1200.0).sqrt();
        assert_eq!(g.len(), 30);
        assert!((g[0] - 0.01 * s).abs() < 1e-15);
        assert!((g[29] - 2.0 * s).abs() < 1e-12);
    }
}
