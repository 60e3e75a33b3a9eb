//! Working correlation structures for the within-subject outcome vector and
//! their moment estimators.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};

/// Largest absolute correlation an estimate may take.
pub const RHO_BOUND: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrKind {
    Independent,
    Exchangeable,
    Ar1,
    Unstructured,
}

impl CorrKind {
    pub const ALL: [CorrKind; 4] = [
        CorrKind::Independent,
        CorrKind::Exchangeable,
        CorrKind::Ar1,
        CorrKind::Unstructured,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            CorrKind::Independent => "ind",
            CorrKind::Exchangeable => "exch",
            CorrKind::Ar1 => "ar1",
            CorrKind::Unstructured => "un",
        }
    }
}

impl fmt::Display for CorrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for CorrKind {
    type Err = PegError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" | "independent" | "independence" => Ok(CorrKind::Independent),
            "exch" | "exchangeable" => Ok(CorrKind::Exchangeable),
            "ar1" => Ok(CorrKind::Ar1),
            "un" | "unstructured" => Ok(CorrKind::Unstructured),
            other => Err(PegError::InvalidParameter(format!(
                "unknown correlation structure `{other}` (expected ind, exch, ar1 or un)"
            ))),
        }
    }
}

/// A working correlation structure with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorkingCorrelation {
    Independent,
    Exchangeable { rho: f64 },
    Ar1 { rho: f64 },
    /// Row-major `J x J` correlation matrix.
    Unstructured { r: Vec<Vec<f64>> },
}

impl WorkingCorrelation {
    pub fn kind(&self) -> CorrKind {
        match self {
            WorkingCorrelation::Independent => CorrKind::Independent,
            WorkingCorrelation::Exchangeable { .. } => CorrKind::Exchangeable,
            WorkingCorrelation::Ar1 { .. } => CorrKind::Ar1,
            WorkingCorrelation::Unstructured { .. } => CorrKind::Unstructured,
        }
    }

    /// Scalar correlation parameter, zero for the independent structure and
    /// `None` for the unstructured one.
    pub fn rho(&self) -> Option<f64> {
        match self {
            WorkingCorrelation::Independent => Some(0.0),
            WorkingCorrelation::Exchangeable { rho } | WorkingCorrelation::Ar1 { rho } => Some(*rho),
            WorkingCorrelation::Unstructured { .. } => None,
        }
    }

    /// `R` for a subject with `j` sessions.
    pub fn matrix(&self, j: usize) -> Result<DMatrix<f64>> {
        if j == 0 {
            return Err(PegError::Dimension("zero sessions".into()));
        }
        let r = match self {
            WorkingCorrelation::Independent => DMatrix::identity(j, j),
            WorkingCorrelation::Exchangeable { rho } => {
                check_rho(*rho)?;
                if j > 1 && *rho <= -1.0 / (j as f64 - 1.0) {
                    return Err(PegError::InvalidParameter(format!(
                        "exchangeable rho {rho} must exceed -1/(J-1) for J = {j}"
                    )));
                }
                DMatrix::from_fn(j, j, |a, b| if a == b { 1.0 } else { *rho })
            }
            WorkingCorrelation::Ar1 { rho } => {
                check_rho(*rho)?;
                DMatrix::from_fn(j, j, |a, b| rho.powi((a as i32 - b as i32).abs()))
            }
            WorkingCorrelation::Unstructured { r } => {
                if r.len() != j || r.iter().any(|row| row.len() != j) {
                    return Err(PegError::Unbalanced);
                }
                let m = DMatrix::from_fn(j, j, |a, b| r[a][b]);
                for a in 0..j {
                    if (m[(a, a)] - 1.0).abs() > 1e-12 {
                        return Err(PegError::InvalidParameter(
                            "unstructured correlation must have unit diagonal".into(),
                        ));
                    }
                    for b in 0..a {
                        if (m[(a, b)] - m[(b, a)]).abs() > 1e-12 {
                            return Err(PegError::InvalidParameter(
                                "unstructured correlation must be symmetric".into(),
                            ));
                        }
                    }
                }
                m
            }
        };
        Ok(r)
    }

    /// `(R, R^-1)` for `j` sessions, the inverse from a Cholesky factorization.
    pub fn materialize(&self, j: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let r = self.matrix(j)?;
        let inv = r
            .clone()
            .cholesky()
            .ok_or_else(|| {
                PegError::NotPositiveDefinite(format!("{} working correlation", self.kind()))
            })?
            .inverse();
        Ok((r, inv))
    }

    /// `R^-1` for every session count `1..=max_j` that occurs in `counts`.
    pub fn inverses(&self, counts: &[usize]) -> Result<Vec<Option<DMatrix<f64>>>> {
        let max_j = counts.iter().copied().max().unwrap_or(0);
        let mut out = vec![None; max_j + 1];
        for &j in counts {
            if out[j].is_none() {
                out[j] = Some(self.materialize(j)?.1);
            }
        }
        Ok(out)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > -1.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(PegError::InvalidParameter(format!("correlation {rho} outside (-1, 1)")))
    }
}

/// Output of [`estimate_correlation`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    pub corr: WorkingCorrelation,
    /// Set when the raw moment estimate had to be pulled back into range.
    pub clamped: bool,
}

/// Moment estimator of the working correlation from per-subject residual
/// vectors standardized by `sqrt(sigma2)`.
pub fn estimate_correlation(
    residuals: &[DVector<f64>],
    kind: CorrKind,
    sigma2: f64,
) -> Result<CorrelationEstimate> {
    if !(sigma2 > 0.0) {
        return Err(PegError::InvalidParameter(format!("sigma2 = {sigma2} must be positive")));
    }
    let max_j = residuals.iter().map(|e| e.len()).max().unwrap_or(0);
    let (corr, clamped) = match kind {
        CorrKind::Independent => (WorkingCorrelation::Independent, false),
        CorrKind::Exchangeable => {
            let (mut num, mut pairs) = (0.0, 0.0);
            for e in residuals {
                let s: f64 = e.sum();
                let ss: f64 = e.iter().map(|v| v * v).sum();
                // sum over j < j' of e_j e_j'
                num += 0.5 * (s * s - ss);
                let j = e.len() as f64;
                pairs += 0.5 * j * (j - 1.0);
            }
            let raw = if pairs > 0.0 { num / (pairs * sigma2) } else { 0.0 };
            let lower = if max_j > 1 {
                (-1.0 / (max_j as f64 - 1.0) + 1e-6).max(-RHO_BOUND)
            } else {
                -RHO_BOUND
            };
            let rho = raw.clamp(lower, RHO_BOUND);
            (WorkingCorrelation::Exchangeable { rho }, rho != raw)
        }
        CorrKind::Ar1 => {
            let (mut num, mut pairs) = (0.0, 0.0);
            for e in residuals {
                for j in 1..e.len() {
                    num += e[j] * e[j - 1];
                    pairs += 1.0;
                }
            }
            let raw = if pairs > 0.0 { num / (pairs * sigma2) } else { 0.0 };
            let rho = raw.clamp(-RHO_BOUND, RHO_BOUND);
            (WorkingCorrelation::Ar1 { rho }, rho != raw)
        }
        CorrKind::Unstructured => {
            if residuals.iter().any(|e| e.len() != max_j) {
                return Err(PegError::Unbalanced);
            }
            let n = residuals.len() as f64;
            let mut s = DMatrix::<f64>::zeros(max_j, max_j);
            for e in residuals {
                s.ger(1.0 / (n * sigma2), e, e, 1.0);
            }
            let (r, clamped) = unit_diagonal_spd(&s);
            let rows = (0..max_j)
                .map(|a| (0..max_j).map(|b| r[(a, b)]).collect())
                .collect();
            (WorkingCorrelation::Unstructured { r: rows }, clamped)
        }
    };
    if clamped {
        warn!("working correlation estimate clamped into the admissible range");
    }
    Ok(CorrelationEstimate { corr, clamped })
}

/// Rescales a second-moment matrix to unit diagonal, clamps off-diagonals, and
/// shrinks toward the identity until Cholesky succeeds.
fn unit_diagonal_spd(s: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let j = s.nrows();
    let mut clamped = false;
    let mut r = DMatrix::identity(j, j);
    for a in 0..j {
        for b in 0..a {
            let d = (s[(a, a)] * s[(b, b)]).sqrt();
            let raw = if d > 0.0 { s[(a, b)] / d } else { 0.0 };
            let v = raw.clamp(-RHO_BOUND, RHO_BOUND);
            clamped |= v != raw;
            r[(a, b)] = v;
            r[(b, a)] = v;
        }
    }
    if min_eigen(&r) >= 1e-6 {
        return (r, clamped);
    }
    let eye = DMatrix::<f64>::identity(j, j);
    for step in 1..20 {
        let t = step as f64 * 0.05;
        let blended = &r * (1.0 - t) + &eye * t;
        if min_eigen(&blended) >= 1e-6 {
            return (blended, true);
        }
    }
    (eye, true)
}

fn min_eigen(r: &DMatrix<f64>) -> f64 {
    r.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exchangeable_two_by_two() {
        let (r, inv) = WorkingCorrelation::Exchangeable { rho: 0.8 }.materialize(2).unwrap();
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]));
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -0.8, -0.8, 1.0]) / 0.36;
        assert!((inv - expected).amax() < 1e-12);
    }

    #[test]
    fn ar1_entry_is_rho_squared() {
        let r = WorkingCorrelation::Ar1 { rho: 0.5 }.matrix(3).unwrap();
        assert_eq!(r[(0, 2)], 0.25);
    }

    #[test]
    fn non_spd_unstructured_is_rejected() {
        let w = WorkingCorrelation::Unstructured {
            r: vec![
                vec![1.0, 0.9, -0.9],
                vec![0.9, 1.0, 0.9],
                vec![-0.9, 0.9, 1.0],
            ],
        };
        assert!(matches!(w.materialize(3), Err(PegError::NotPositiveDefinite(_))));
    }

    #[test]
    fn equal_residuals_clamp_exchangeable() {
        let res = vec![DVector::from_element(4, 1.0); 10];
        let est = estimate_correlation(&res, CorrKind::Exchangeable, 1.0).unwrap();
        assert!(est.clamped);
        assert_eq!(est.corr, WorkingCorrelation::Exchangeable { rho: RHO_BOUND });
    }

    #[test]
    fn independent_ignores_residuals() {
        let res = vec![DVector::from_element(4, 1.0); 10];
        let est = estimate_correlation(&res, CorrKind::Independent, 1.0).unwrap();
        assert_eq!(est.corr.rho(), Some(0.0));
        assert!(!est.clamped);
    }

    fn exchangeable_sample(n: usize, j: usize, rho: f64, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, _) = WorkingCorrelation::Exchangeable { rho }.materialize(j).unwrap();
        let l = r.cholesky().unwrap().l();
        (0..n)
            .map(|_| {
                let z = DVector::from_fn(j, |_, _| StandardNormal.sample(&mut rng));
                &l * z
            })
            .collect()
    }

    #[test]
    fn recovers_exchangeable_rho() {
        let res = exchangeable_sample(1200, 6, 0.8, 11);
        let est = estimate_correlation(&res, CorrKind::Exchangeable, 1.0).unwrap();
        let rho = est.corr.rho().unwrap();
        assert!(rho > 0.75 && rho < 0.85, "rho = {rho}");
    }

    #[test]
    fn unstructured_estimate_has_unit_diagonal_and_is_spd() {
        let res = exchangeable_sample(500, 4, 0.5, 3);
        let est = estimate_correlation(&res, CorrKind::Unstructured, 1.3).unwrap();
        let (r, inv) = est.corr.materialize(4).unwrap();
        for a in 0..4 {
            assert!((r[(a, a)] - 1.0).abs() < 1e-12);
        }
        assert!(((&r * inv) - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
        assert!((r[(0, 1)] - 0.5).abs() < 0.1);
    }

    #[test]
    fn unstructured_requires_balanced_data() {
        let res = vec![DVector::zeros(3), DVector::zeros(2)];
        assert!(matches!(
            estimate_correlation(&res, CorrKind::Unstructured, 1.0),
            Err(PegError::Unbalanced)
        ));
    }

    #[test]
    fn shrinks_indefinite_moment_matrix() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.95, -0.95, 0.95, 1.0, 0.95, -0.95, 0.95, 1.0]);
        let (r, clamped) = unit_diagonal_spd(&s);
        assert!(clamped);
        assert!(r.clone().cholesky().is_some());
        assert!((r[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parses_short_names() {
        for k in CorrKind::ALL {
            assert_eq!(k.short_name().parse::<CorrKind>().unwrap(), k);
        }
        assert!("banded".parse::<CorrKind>().is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn kinds() -> impl Strategy<Value = (WorkingCorrelation, usize)> {
        (1usize..9, -0.98f64..0.98, 0usize..3).prop_map(|(j, rho, which)| {
            let w = match which {
                0 => WorkingCorrelation::Independent,
                1 => {
                    let lo = if j > 1 { -1.0 / (j as f64 - 1.0) + 1e-3 } else { -0.98 };
                    WorkingCorrelation::Exchangeable { rho: rho.max(lo) }
                }
                _ => WorkingCorrelation::Ar1 { rho },
            };
            (w, j)
        })
    }

    proptest! {
        #[test]
        fn materialized_is_spd_unit_diagonal((w, j) in kinds()) {
            let (r, inv) = w.materialize(j).unwrap();
            prop_assert!(r.clone().cholesky().is_some());
            for a in 0..j {
                prop_assert_eq!(r[(a, a)], 1.0);
                for b in 0..j {
                    prop_assert_eq!(r[(a, b)], r[(b, a)]);
                }
            }
            let err = (&r * &inv - DMatrix::<f64>::identity(j, j)).amax();
            prop_assert!(err < 1e-10 * (1.0 + inv.amax()), "err {}", err);
        }

        #[test]
        fn estimate_is_order_invariant(
            vals in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 2..20),
            which in 0usize..4,
        ) {
            let kind = CorrKind::ALL[which];
            let res: Vec<DVector<f64>> = vals.iter().map(|v| DVector::from_vec(v.clone())).collect();
            let mut rev = res.clone();
            rev.reverse();
            let a = estimate_correlation(&res, kind, 1.5).unwrap();
            let b = estimate_correlation(&rev, kind, 1.5).unwrap();
            let ra = a.corr.matrix(4).unwrap();
            let rb = b.corr.matrix(4).unwrap();
            prop_assert!((ra - rb).amax() < 1e-12);
        }
    }
}
