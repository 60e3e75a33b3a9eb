//! Decorrelated-score inference: per-coordinate nuisance weights, the one-step
//! improved estimator, its Wald interval and the score test of `psi_k = 0`.
//!
//! Scores are `S_i = ((a - e).H)' V^-1 e_i` on the blip coordinates, evaluated
//! at the penalized fit, and `I = n^-1 sum S_i S_i'`. With `e_i = y_i - X2_i theta`
//! the score decreases in `psi`, so the Newton step that zeroes the
//! decorrelated score is `psi_k + S_dec / I_{k|nu}`.

pub mod cv;
pub mod simplex;
pub mod weights;

pub use cv::{cv_select_lambda_w, default_cv_grid, CvFolds, CvResult};
pub use weights::{weights_from_info, WeightEstimate, WeightMethod};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{PegError, Result};
use crate::interval::CoordinateInterval;
use crate::linalg::normal_two_sided_quantile;
use crate::par::*;
use crate::peg::sandwich::check_alpha;
use crate::peg::{MomentCache, PenalizedFit};
use crate::propensity::PropensityModel;
use weights::nuisance;

/// Partial information below this is treated as degenerate.
pub const MIN_PARTIAL_INFO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDecomposition {
    /// `n x K` per-subject blip scores.
    pub scores: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// `n^-1 sum S_i S_i'`.
    pub info: DMatrix<f64>,
    /// Derivative of the mean blip score with respect to `-psi`.
    pub jacobian: DMatrix<f64>,
}

impl ScoreDecomposition {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn dim(&self) -> usize {
        self.scores.ncols()
    }
}

pub fn efficient_scores(d: &Dataset, pm: &PropensityModel, fit: &PenalizedFit) -> Result<ScoreDecomposition> {
    efficient_scores_cached(&MomentCache::new(d, pm)?, fit)
}

pub fn efficient_scores_cached(cache: &MomentCache, fit: &PenalizedFit) -> Result<ScoreDecomposition> {
    let k = cache.k();
    if fit.k() != k {
        return Err(PegError::Dimension("fit and data disagree on K".into()));
    }
    let all = cache.scores(&fit.theta(), &fit.corr, fit.sigma2)?;
    let scores = all.columns(k, k).into_owned();
    let n = scores.nrows() as f64;
    let mean = scores.row_mean().transpose();
    let info = scores.tr_mul(&scores) / n;
    let w = cache.assemble(&fit.corr, fit.sigma2)?.w;
    let jacobian = w.view((k, k), (k, k)).into_owned();
    Ok(ScoreDecomposition {
        scores,
        mean,
        info,
        jacobian,
    })
}

/// `S_k - w' S_nu` at the plug-in estimates.
pub fn decorrelated_score(sd: &ScoreDecomposition, k: usize, w: &DVector<f64>) -> f64 {
    decorrelate(&sd.mean, k, w)
}

fn decorrelate(s: &DVector<f64>, k: usize, w: &DVector<f64>) -> f64 {
    let nu = nuisance(k, s.len());
    s[k] - nu.iter().zip(w.iter()).map(|(&j, wj)| wj * s[j]).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepResult {
    pub coordinate: usize,
    pub psi_hat: f64,
    pub psi_tilde: f64,
    pub decorrelated_score: f64,
    pub partial_info: f64,
    pub sigma_s: f64,
    pub interval: CoordinateInterval,
    /// Score statistic for `psi_k = 0`.
    pub score_stat: f64,
    pub score_pvalue: f64,
    pub weights: WeightEstimate,
}

impl OneStepResult {
    /// `sqrt(n) (psi_tilde - psi) I_{k|nu} / sqrt(sigma_s)`.
    pub fn standardized(&self, psi: f64, n: usize) -> f64 {
        (n as f64).sqrt() * (self.psi_tilde - psi) * self.partial_info / self.sigma_s.sqrt()
    }
}

pub fn one_step(
    sd: &ScoreDecomposition,
    fit: &PenalizedFit,
    k: usize,
    weights: &WeightEstimate,
    alpha: f64,
) -> Result<OneStepResult> {
    check_alpha(alpha)?;
    let dim = sd.dim();
    if k >= dim || weights.w.len() + 1 != dim || weights.target != k {
        return Err(PegError::Dimension(format!("weights do not match coordinate {k}")));
    }
    let w = weights.vector();
    let nu = nuisance(k, dim);
    let info_nk = DVector::from_fn(nu.len(), |r, _| sd.info[(nu[r], k)]);
    let partial_info = sd.info[(k, k)] - w.dot(&info_nk);
    if !(partial_info > MIN_PARTIAL_INFO) {
        return Err(PegError::DegenerateInformation {
            coordinate: k,
            value: partial_info,
        });
    }
    let mut c = DVector::zeros(dim);
    c[k] = 1.0;
    for (r, &j) in nu.iter().enumerate() {
        c[j] = -w[r];
    }
    let sigma_s = c.dot(&(&sd.info * &c)).max(0.0);
    let score = decorrelated_score(sd, k, &w);
    let psi_hat = fit.psi[k];
    let psi_tilde = psi_hat + score / partial_info;
    let root_n = (sd.n() as f64).sqrt();
    let half = normal_two_sided_quantile(alpha) * sigma_s.sqrt() / (root_n * partial_info);

    // mean score with psi_k set to zero
    let s0 = &sd.mean + sd.jacobian.column(k) * psi_hat;
    let score_stat = root_n * decorrelate(&s0, k, &w) / sigma_s.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let score_pvalue = 2.0 * (1.0 - std.cdf(score_stat.abs()));
    Ok(OneStepResult {
        coordinate: k,
        psi_hat,
        psi_tilde,
        decorrelated_score: score,
        partial_info,
        sigma_s,
        interval: CoordinateInterval::symmetric(k, psi_tilde, half),
        score_stat,
        score_pvalue,
        weights: weights.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    /// Explicit `lambda_w` grid; the default grid is used when absent.
    pub grid: Option<Vec<f64>>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            grid: None,
            folds: cv::DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscoreReport {
    pub method: WeightMethod,
    pub alpha: f64,
    pub results: Vec<OneStepResult>,
}

impl DscoreReport {
    pub fn intervals(&self) -> Vec<CoordinateInterval> {
        self.results.iter().map(|r| r.interval.clone()).collect()
    }
}

/// One-step results for every selected coordinate, with `lambda_w` chosen by
/// cross-validation for the sparse weight methods.
pub fn infer_all(
    sd: &ScoreDecomposition,
    fit: &PenalizedFit,
    method: WeightMethod,
    alpha: f64,
    cv: &CvSettings,
) -> Result<DscoreReport> {
    check_alpha(alpha)?;
    if !fit.converged {
        return Err(PegError::NoConvergence);
    }
    let folds = match method {
        WeightMethod::Full => None,
        _ => Some(CvFolds::new(sd, cv.folds, cv.seed)?),
    };
    let coords = fit.selected.indices().to_vec();
    let results: Vec<Result<OneStepResult>> = coords
        .par_iter()
        .map(|&k| {
            let lambda = match &folds {
                None => 0.0,
                Some(f) => {
                    let grid = cv.grid.clone().unwrap_or_else(|| default_cv_grid(sd, k));
                    cv_select_lambda_w(k, method, &grid, f)?.lambda_w
                }
            };
            let w = weights_from_info(&sd.info, k, method, lambda)?;
            one_step(sd, fit, k, &w, alpha)
        })
        .collect();
    Ok(DscoreReport {
        method,
        alpha,
        results: results.into_iter().collect::<Result<_>>()?,
    })
}

pub fn dscore(
    d: &Dataset,
    pm: &PropensityModel,
    fit: &PenalizedFit,
    method: WeightMethod,
    alpha: f64,
    cv: &CvSettings,
) -> Result<DscoreReport> {
    let sd = efficient_scores(d, pm, fit)?;
    infer_all(&sd, fit, method, alpha, cv)
}
