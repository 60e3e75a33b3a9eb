//! The five interval procedures behind one entry point, and the end-to-end
//! analysis pipeline shared by the CLI and the simulation runner.
//!
//! The pipeline standardizes continuous adjusters (scale only), fits the
//! propensity model and the tuned penalized fit on the scaled data, and maps
//! estimates and intervals back to the original scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correlation::CorrKind;
use crate::data::{Dataset, ModelIndexSet, Scaling};
use crate::dscore::{efficient_scores_cached, infer_all, CvSettings, DscoreReport, WeightMethod};
use crate::error::{PegError, Result};
use crate::interval::CoordinateInterval;
use crate::peg::sandwich::sandwich_ci_cached;
use crate::peg::tuning::tune_lambda_cached;
use crate::peg::{FitControls, MomentCache, PenalizedFit, TuningResult};
use crate::propensity::{fit_propensity, PropensityModel};
use crate::uposi::{build_z_vectors, multiplier_bootstrap, uposi_intervals, UposiReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "uposi")]
    Uposi,
    #[serde(rename = "os-full")]
    OsFull,
    #[serde(rename = "os-lasso")]
    OsLasso,
    #[serde(rename = "os-dantzig")]
    OsDantzig,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Naive,
        Method::Uposi,
        Method::OsFull,
        Method::OsLasso,
        Method::OsDantzig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Uposi => "uposi",
            Method::OsFull => "os-full",
            Method::OsLasso => "os-lasso",
            Method::OsDantzig => "os-dantzig",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PegError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                PegError::InvalidParameter(format!(
                    "unknown method `{s}`; expected one of naive, uposi, os-full, os-lasso, os-dantzig"
                ))
            })
    }
}

impl Method {
    /// Weight estimator of a one-step method.
    pub fn weight_method(self) -> Option<WeightMethod> {
        match self {
            Method::OsFull => Some(WeightMethod::Full),
            Method::OsLasso => Some(WeightMethod::Lasso),
            Method::OsDantzig => Some(WeightMethod::Dantzig),
            Method::Naive | Method::Uposi => None,
        }
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub alpha: f64,
    /// Multiplier bootstrap replicates.
    pub boot: usize,
    /// Seeds the bootstrap multipliers and the cross-validation folds.
    pub seed: u64,
    pub cv_folds: usize,
    /// Explicit `lambda_w` grid for the sparse one-step weights.
    pub cv_grid: Option<Vec<f64>>,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            alpha: 0.05,
            boot: 1000,
            seed: 0,
            cv_folds: 5,
            cv_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InferenceDetail {
    Naive,
    Uposi(UposiReport),
    Dscore(DscoreReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub method: Method,
    pub alpha: f64,
    /// Intervals on the original covariate scale.
    pub intervals: Vec<CoordinateInterval>,
    /// Method output on the standardized scale.
    pub detail: InferenceDetail,
}

/// Everything up to and including the tuned penalized fit.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub scaling: Scaling,
    /// Data on the standardized scale.
    pub data: Dataset,
    pub propensity: PropensityModel,
    pub cache: MomentCache,
    pub tuning: TuningResult,
}

impl Analysis {
    /// `grid` is on the standardized scale; the default grid is used when absent.
    pub fn new(
        d: &Dataset,
        propensity_columns: &ModelIndexSet,
        kind: CorrKind,
        grid: Option<&[f64]>,
        controls: &FitControls,
    ) -> Result<Self> {
        let scaling = Scaling::standardize(d);
        let data = d.scaled(&scaling);
        let propensity = fit_propensity(&data, propensity_columns)?;
        let cache = MomentCache::new(&data, &propensity)?;
        let tuning = tune_lambda_cached(&cache, kind, grid, controls)?;
        Ok(Analysis {
            scaling,
            data,
            propensity,
            cache,
            tuning,
        })
    }

    /// Selected fit on the standardized scale.
    pub fn fit(&self) -> &PenalizedFit {
        self.tuning.best_fit()
    }

    pub fn delta(&self) -> Vec<f64> {
        self.unscale(&self.fit().delta)
    }

    pub fn psi(&self) -> Vec<f64> {
        self.unscale(&self.fit().psi)
    }

    fn unscale(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.scaling.factors).map(|(x, f)| x / f).collect()
    }

    pub fn infer(&self, method: Method, opts: &InferenceOptions) -> Result<InferenceReport> {
        infer_scaled(&self.data, &self.propensity, &self.cache, self.fit(), &self.scaling, method, opts)
    }
}

/// Runs one method on standardized data and maps the intervals back.
pub fn infer_scaled(
    data: &Dataset,
    pm: &PropensityModel,
    cache: &MomentCache,
    fit: &PenalizedFit,
    scaling: &Scaling,
    method: Method,
    opts: &InferenceOptions,
) -> Result<InferenceReport> {
    let (scaled, detail) = match method {
        Method::Naive => (sandwich_ci_cached(cache, fit, opts.alpha)?, InferenceDetail::Naive),
        Method::Uposi => {
            let z = build_z_vectors(data, pm, &fit.corr, fit.sigma2)?;
            let q = multiplier_bootstrap(&z, opts.boot, opts.alpha, opts.seed)?;
            let mm = cache.assemble(&fit.corr, fit.sigma2)?.restrict(&fit.selected)?;
            let r = uposi_intervals(fit, &mm, &q, opts.alpha)?;
            (r.intervals.clone(), InferenceDetail::Uposi(r))
        }
        Method::OsFull | Method::OsLasso | Method::OsDantzig => {
            let sd = efficient_scores_cached(cache, fit)?;
            let cv = CvSettings {
                grid: opts.cv_grid.clone(),
                folds: opts.cv_folds,
                seed: opts.seed,
            };
            let wm = method.weight_method().expect("one-step method");
            let r = infer_all(&sd, fit, wm, opts.alpha, &cv)?;
            (r.intervals(), InferenceDetail::Dscore(r))
        }
    };
    let intervals = scaled
        .iter()
        .map(|iv| iv.unscale(scaling.factors[iv.coordinate]))
        .collect();
    Ok(InferenceReport {
        method,
        alpha: opts.alpha,
        intervals,
        detail,
    })
}
