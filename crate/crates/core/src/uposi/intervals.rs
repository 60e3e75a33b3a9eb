//! Coordinate intervals and the simultaneous region for the selected model.

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::bootstrap::BootstrapQuantiles;
use crate::data::ModelIndexSet;
use crate::error::{PegError, Result};
use crate::interval::CoordinateInterval;
use crate::linalg::{l1_norm, lu_inverse, min_singular_value, submatrix, sup_norm};
use crate::peg::{theta_coords, MomentMatrices, PenalizedFit};

/// Values below this (relative to the largest entry of `W`) are flagged as
/// near-singular.
pub const OMEGA_FLAG: f64 = 1e-8;

/// Smallest singular value of `W(M)` for one evaluated submodel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelEigen {
    /// Blip column removed from the selected model; `None` for the model itself.
    pub dropped: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDiagnostic {
    pub omega: f64,
    pub submodels: Vec<SubmodelEigen>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UposiReport {
    pub intervals: Vec<CoordinateInterval>,
    pub quantiles: BootstrapQuantiles,
    /// `||theta_hat(M)||_1` over `delta` and the selected blip coordinates.
    pub theta_l1: f64,
    pub diagnostic: EigenDiagnostic,
}

impl UposiReport {
    pub fn interval(&self, coordinate: usize) -> Option<&CoordinateInterval> {
        self.intervals.iter().find(|c| c.coordinate == coordinate)
    }
}

/// `theta_hat` restricted to `delta` and the blip coordinates of `model`.
pub fn restricted_theta(fit: &PenalizedFit, model: &ModelIndexSet) -> DVector<f64> {
    let theta = fit.theta();
    let idx = theta_coords(fit.k(), model);
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| theta[i]))
}

fn check_model(fit: &PenalizedFit, mm: &MomentMatrices) -> Result<()> {
    if mm.k != fit.k() || mm.model != fit.selected {
        return Err(PegError::Dimension(
            "moment matrices are not restricted to the fitted selection".into(),
        ));
    }
    Ok(())
}

/// Smallest singular value of `W(M)` over the selected model and each of its
/// one-column deletions (the blip intercept is never deleted). `W(M)` is not
/// symmetric, so singular values stand in for eigenvalues.
pub fn eigen_diagnostic(mm: &MomentMatrices) -> EigenDiagnostic {
    let k = mm.k;
    let mut submodels = vec![SubmodelEigen {
        dropped: None,
        value: min_singular_value(&mm.w),
    }];
    for (pos, &m) in mm.model.indices().iter().enumerate().skip(1) {
        let keep: Vec<usize> = (0..mm.order()).filter(|&c| c != k + pos).collect();
        submodels.push(SubmodelEigen {
            dropped: Some(m),
            value: min_singular_value(&submatrix(&mm.w, &keep)),
        });
    }
    let omega = submodels.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
    let scale = sup_norm(mm.w.iter()).max(f64::MIN_POSITIVE);
    let flagged = !(omega > OMEGA_FLAG * scale);
    if flagged {
        warn!("near-singular W over the evaluated submodels (omega = {omega:e})");
    }
    EigenDiagnostic {
        omega,
        submodels,
        flagged,
    }
}

/// `psi_k +/- ||c_k' W(M)^-1||_1 (C_G + C_W ||theta_hat||_1)` for every
/// selected blip coordinate `k`.
pub fn uposi_intervals(
    fit: &PenalizedFit,
    mm: &MomentMatrices,
    q: &BootstrapQuantiles,
    alpha: f64,
) -> Result<UposiReport> {
    check_model(fit, mm)?;
    if alpha != q.alpha {
        return Err(PegError::InvalidParameter(format!(
            "alpha = {alpha} differs from the bootstrap level {}",
            q.alpha
        )));
    }
    let winv = lu_inverse(&mm.w)?;
    let theta = restricted_theta(fit, &fit.selected);
    let theta_l1 = l1_norm(theta.iter());
    let radius = q.c_g + q.c_w * theta_l1;
    let k = fit.k();
    let intervals = fit
        .selected
        .indices()
        .iter()
        .enumerate()
        .map(|(pos, &m)| {
            let half = l1_norm(winv.row(k + pos).iter()) * radius;
            CoordinateInterval::symmetric(m, fit.psi[m], half)
        })
        .collect();
    Ok(UposiReport {
        intervals,
        quantiles: q.clone(),
        theta_l1,
        diagnostic: eigen_diagnostic(mm),
    })
}

/// `||W(M)(theta_hat - theta)||_inf <= C_G + C_W ||theta_hat||_1`, with `theta`
/// of length `K + |M|`.
pub fn uposi_region_check(
    theta: &DVector<f64>,
    fit: &PenalizedFit,
    mm: &MomentMatrices,
    q: &BootstrapQuantiles,
) -> Result<bool> {
    check_model(fit, mm)?;
    let hat = restricted_theta(fit, &fit.selected);
    if theta.len() != hat.len() {
        return Err(PegError::Dimension(format!(
            "theta has length {}, expected {}",
            theta.len(),
            hat.len()
        )));
    }
    let lhs = sup_norm((&mm.w * (&hat - theta)).iter());
    Ok(lhs <= q.c_g + q.c_w * l1_norm(hat.iter()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::WorkingCorrelation;
    use crate::peg::ScadPenalty;
    use nalgebra::DMatrix;

    fn quantiles(c_g: f64, c_w: f64) -> BootstrapQuantiles {
        BootstrapQuantiles {
            c_g,
            c_w,
            alpha: 0.05,
            replicates: 1000,
            seed: 0,
            t_hat: 1.0,
            m_g: c_g,
            m_w: c_w,
            degenerate: false,
        }
    }

    fn fit_with(delta: Vec<f64>, psi: Vec<f64>, selected: Vec<usize>) -> PenalizedFit {
        let k = delta.len();
        PenalizedFit {
            delta,
            psi,
            sigma2: 1.0,
            corr: WorkingCorrelation::Independent,
            corr_clamped: false,
            penalty: ScadPenalty::new(0.1, 3.7).unwrap(),
            selected: ModelIndexSet::new(selected, k).unwrap(),
            iterations: 1,
            converged: true,
        }
    }

    fn mm_for(fit: &PenalizedFit, w: DMatrix<f64>) -> MomentMatrices {
        let p = w.nrows();
        MomentMatrices {
            w,
            g: DVector::zeros(p),
            model: fit.selected.clone(),
            k: fit.k(),
        }
    }

    #[test]
    fn identity_w_half_length() {
        // |theta|_1 = 0.5 + 0.5 + 0.6 + 0.4 = 2
        let fit = fit_with(vec![0.5, -0.5], vec![0.6, -0.4], vec![0, 1]);
        let mm = mm_for(&fit, DMatrix::identity(4, 4));
        let r = uposi_intervals(&fit, &mm, &quantiles(0.1, 0.05), 0.05).unwrap();
        assert_eq!(r.intervals.len(), 2);
        for iv in &r.intervals {
            assert!((iv.half_length() - 0.2).abs() < 1e-15);
        }
        assert_eq!(r.diagnostic.omega, 1.0);
    }

    #[test]
    fn zero_quantiles_collapse() {
        let fit = fit_with(vec![0.5, 1.0], vec![0.3, 0.0], vec![0]);
        let mm = mm_for(&fit, DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.3, 1.0, 0.2, 0.0, 0.1, 1.5]));
        let r = uposi_intervals(&fit, &mm, &quantiles(0.0, 0.0), 0.05).unwrap();
        assert_eq!(r.intervals[0].lower, 0.3);
        assert_eq!(r.intervals[0].upper, 0.3);
        let hat = restricted_theta(&fit, &fit.selected);
        assert!(uposi_region_check(&hat, &fit, &mm, &quantiles(0.0, 0.0)).unwrap());
        let mut off = hat.clone();
        off[2] += 1e-6;
        assert!(!uposi_region_check(&off, &fit, &mm, &quantiles(0.0, 0.0)).unwrap());
    }

    #[test]
    fn singular_w_is_an_error() {
        let fit = fit_with(vec![0.5], vec![0.3], vec![0]);
        let mm = mm_for(&fit, DMatrix::from_element(2, 2, 1.0));
        assert!(uposi_intervals(&fit, &mm, &quantiles(0.1, 0.1), 0.05).is_err());
    }

    #[test]
    fn diagnostic_is_min_over_deletions() {
        let fit = fit_with(vec![1.0, 0.0], vec![0.5, 0.4], vec![0, 1]);
        let w = DMatrix::from_row_slice(
            4,
            4,
            &[3.0, 0.2, 0.1, 0.0, 0.2, 2.0, 0.3, 0.1, 0.1, 0.0, 1.0, 0.5, 0.0, 0.4, 0.5, 0.9],
        );
        let mm = mm_for(&fit, w.clone());
        let d = eigen_diagnostic(&mm);
        assert_eq!(d.submodels.len(), 2);
        assert_eq!(d.submodels[1].dropped, Some(1));
        assert!(d.omega <= min_singular_value(&w));
        assert!(!d.flagged);
    }
}
