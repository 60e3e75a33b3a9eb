use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::moments::{g_estimate, MomentCache, MomentMatrices};
use super::scad::ScadPenalty;
use crate::correlation::{estimate_correlation, CorrKind, WorkingCorrelation};
use crate::data::{Dataset, ModelIndexSet};
use crate::error::{PegError, Result};
use crate::linalg::{lu_solve, sup_norm};
use crate::propensity::PropensityModel;

/// Blip coefficients below this magnitude are treated as unselected.
pub const SELECTION_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitControls {
    pub max_iter: usize,
    pub tol: f64,
    /// Perturbation in the MM weights `q(|psi|) / (epsilon + |psi|)`.
    pub epsilon: f64,
}

impl Default for FitControls {
    fn default() -> Self {
        FitControls {
            max_iter: 200,
            tol: 1e-6,
            epsilon: 1e-6,
        }
    }
}

/// Result of one penalized G-estimation run at a fixed tuning parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedFit {
    pub delta: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma2: f64,
    pub corr: WorkingCorrelation,
    /// True when the correlation estimate used in the last step was clamped.
    pub corr_clamped: bool,
    pub penalty: ScadPenalty,
    pub selected: ModelIndexSet,
    pub iterations: usize,
    pub converged: bool,
}

impl PenalizedFit {
    pub fn k(&self) -> usize {
        self.delta.len()
    }

    /// `(delta, psi)` stacked.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.k(),
            self.delta.iter().chain(self.psi.iter()).cloned(),
        )
    }

    /// Number of selected blip coefficients other than the intercept.
    pub fn selected_modifiers(&self) -> usize {
        self.selected.len() - 1
    }
}

/// `{0} ∪ {m : |psi_m| >= 0.001}`.
pub fn selected_set(psi: &[f64]) -> ModelIndexSet {
    let idx = std::iter::once(0)
        .chain((1..psi.len()).filter(|&m| psi[m].abs() >= SELECTION_THRESHOLD))
        .collect();
    ModelIndexSet::new(idx, psi.len()).expect("indices are in range")
}

/// Diagonal of the MM penalty matrix at `theta`, over all `2K` coordinates.
/// `delta` and the blip intercept are unpenalized.
pub fn mm_weights(theta: &DVector<f64>, k: usize, penalty: &ScadPenalty, epsilon: f64) -> DVector<f64> {
    DVector::from_fn(2 * k, |i, _| {
        if i <= k || penalty.lambda == 0.0 {
            0.0
        } else {
            let t = theta[i].abs();
            penalty.derivative(t) / (epsilon + t)
        }
    })
}

/// Dispersion `sum e^2 / (N - 2K)`.
pub fn dispersion(residuals: &[DVector<f64>], k: usize) -> Result<f64> {
    let n_total: usize = residuals.iter().map(|e| e.len()).sum();
    if n_total <= 2 * k {
        return Err(PegError::Dimension(format!(
            "{n_total} sessions cannot support {} parameters",
            2 * k
        )));
    }
    let rss: f64 = residuals.iter().map(|e| e.norm_squared()).sum();
    let s2 = rss / (n_total - 2 * k) as f64;
    if s2 > 0.0 {
        Ok(s2)
    } else {
        // exact fit; keep V well defined
        Ok(f64::MIN_POSITIVE.sqrt())
    }
}

/// Unpenalized full-model estimate under working independence.
pub fn initial_estimate(cache: &MomentCache) -> Result<DVector<f64>> {
    let mm = cache.assemble(&WorkingCorrelation::Independent, 1.0)?;
    g_estimate(&mm)
}

/// SCAD-penalized G-estimation by MM iterations.
pub fn penalized_g_fit(
    d: &Dataset,
    pm: &PropensityModel,
    kind: CorrKind,
    penalty: &ScadPenalty,
    controls: &FitControls,
) -> Result<PenalizedFit> {
    let cache = MomentCache::new(d, pm)?;
    let init = initial_estimate(&cache)?;
    penalized_g_fit_cached(&cache, kind, penalty, controls, &init)
}

/// Same as [`penalized_g_fit`] with precomputed moments and starting value.
pub fn penalized_g_fit_cached(
    cache: &MomentCache,
    kind: CorrKind,
    penalty: &ScadPenalty,
    controls: &FitControls,
    init: &DVector<f64>,
) -> Result<PenalizedFit> {
    let k = cache.k();
    if kind == CorrKind::Unstructured && cache.session_counts().len() > 1 {
        return Err(PegError::Unbalanced);
    }
    let mut theta = init.clone();
    let mut state = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < controls.max_iter {
        iterations += 1;
        let res = cache.residuals(&theta);
        let sigma2 = dispersion(&res, k)?;
        let est = estimate_correlation(&res, kind, sigma2)?;
        let mm = cache.assemble(&est.corr, sigma2)?;
        let next = mm_step(&mm, &theta, penalty, controls.epsilon)?;
        let change = sup_norm((&next - &theta).iter());
        theta = next;
        state = Some((sigma2, est));
        if change < controls.tol {
            converged = true;
            break;
        }
    }
    let (sigma2, est) = state.ok_or_else(|| {
        PegError::InvalidParameter("max_iter must be at least 1".into())
    })?;
    if penalty.lambda > 0.0 {
        for m in 1..k {
            if theta[k + m].abs() < SELECTION_THRESHOLD {
                theta[k + m] = 0.0;
            }
        }
    }
    let psi: Vec<f64> = theta.rows(k, k).iter().cloned().collect();
    Ok(PenalizedFit {
        delta: theta.rows(0, k).iter().cloned().collect(),
        selected: selected_set(&psi),
        psi,
        sigma2,
        corr: est.corr,
        corr_clamped: est.clamped,
        penalty: *penalty,
        iterations,
        converged,
    })
}

/// One MM update: solve `(W + Sigma_lambda(theta)) theta_new = G`.
pub fn mm_step(
    mm: &MomentMatrices,
    theta: &DVector<f64>,
    penalty: &ScadPenalty,
    epsilon: f64,
) -> Result<DVector<f64>> {
    let weights = mm_weights(theta, mm.k, penalty, epsilon);
    let a = &mm.w + DMatrix::from_diagonal(&weights);
    lu_solve(&a, &mm.g)
}
