//! Estimating-equation moment matrices `W` and `G`.
//!
//! For subject `i` the row design is `X1 = [H, (a - e).H]` and the column design
//! is `X2 = [H, a.H]`, so that
//! `W = n^-1 sum X1' V^-1 X2` and `G = n^-1 sum X1' V^-1 y` with `V = sigma2 R`.

use nalgebra::{DMatrix, DVector};

use crate::correlation::WorkingCorrelation;
use crate::data::{Dataset, ModelIndexSet, Subject};
use crate::error::{PegError, Result};
use crate::linalg::{condition_number, lu_solve, submatrix, subvector};
use crate::par::*;
use crate::propensity::PropensityModel;

/// Conditioning limit for unpenalized solves.
pub const MAX_CONDITION: f64 = 1e12;

/// `W` and `G` restricted to `delta` and the blip coordinates in `model`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrices {
    pub w: DMatrix<f64>,
    pub g: DVector<f64>,
    pub model: ModelIndexSet,
    pub k: usize,
}

impl MomentMatrices {
    pub fn order(&self) -> usize {
        self.w.nrows()
    }

    /// Restriction of a full-model pair to a submodel.
    pub fn restrict(&self, model: &ModelIndexSet) -> Result<MomentMatrices> {
        if self.model != ModelIndexSet::full(self.k) {
            return Err(PegError::InvalidParameter(
                "only full-model moments can be restricted".into(),
            ));
        }
        let idx = theta_coords(self.k, model);
        Ok(MomentMatrices {
            w: submatrix(&self.w, &idx),
            g: subvector(&self.g, &idx),
            model: model.clone(),
            k: self.k,
        })
    }
}

/// Positions in the full `(delta, psi)` vector kept by `model`: all of `delta`
/// followed by `K + m` for every `m` in the model.
pub fn theta_coords(k: usize, model: &ModelIndexSet) -> Vec<usize> {
    (0..k).chain(model.indices().iter().map(|m| k + m)).collect()
}

/// Row design `[H, (a - e).H]` for one subject.
pub fn row_design(s: &Subject, e: &DVector<f64>) -> DMatrix<f64> {
    let (jn, k) = s.h.shape();
    DMatrix::from_fn(jn, 2 * k, |j, c| {
        if c < k {
            s.h[(j, c)]
        } else {
            (s.a[j] - e[j]) * s.h[(j, c - k)]
        }
    })
}

fn check_propensity(d: &Dataset, pm: &PropensityModel) -> Result<()> {
    if pm.fitted.len() != d.n()
        || pm
            .fitted
            .iter()
            .zip(d.subjects())
            .any(|(e, s)| e.len() != s.sessions())
    {
        return Err(PegError::Dimension(
            "propensity fits do not match the dataset".into(),
        ));
    }
    Ok(())
}

/// Direct per-subject computation of `W(M)` and `G(M)`.
pub fn moment_matrices(
    d: &Dataset,
    pm: &PropensityModel,
    corr: &WorkingCorrelation,
    sigma2: f64,
    model: &ModelIndexSet,
) -> Result<MomentMatrices> {
    check_propensity(d, pm)?;
    if !(sigma2 > 0.0) {
        return Err(PegError::InvalidParameter(format!("sigma2 = {sigma2} must be positive")));
    }
    let k = d.k();
    let counts: Vec<usize> = d.subjects().iter().map(Subject::sessions).collect();
    let rinv = corr.inverses(&counts)?;
    let idx = theta_coords(k, model);
    let p = idx.len();
    let mut w = DMatrix::zeros(p, p);
    let mut g = DVector::zeros(p);
    for (i, s) in d.subjects().iter().enumerate() {
        let e = pm.fitted_for(i);
        let x1 = row_design(s, &e).select_columns(&idx);
        let x2 = s.design().select_columns(&idx);
        let vinv = rinv[s.sessions()].as_ref().expect("inverse materialized") / sigma2;
        let left = x1.tr_mul(&vinv);
        w += &left * x2;
        g += &left * &s.y;
    }
    let n = d.n() as f64;
    Ok(MomentMatrices {
        w: w / n,
        g: g / n,
        model: model.clone(),
        k,
    })
}

/// `theta = W^-1 G` for an unpenalized model, refusing ill-conditioned systems.
pub fn g_estimate(mm: &MomentMatrices) -> Result<DVector<f64>> {
    let cond = condition_number(&mm.w);
    if !(cond <= MAX_CONDITION) {
        return Err(PegError::IllConditioned { cond });
    }
    lu_solve(&mm.w, &mm.g)
}

/// Subjects sharing a session count, with designs stacked by session.
#[derive(Debug, Clone)]
struct SessionGroup {
    j: usize,
    /// Dataset positions of the members.
    members: Vec<usize>,
    /// Per session, `n_g x 2K` stacks of `X1` and `X2` rows.
    x1: Vec<DMatrix<f64>>,
    x2: Vec<DMatrix<f64>>,
    y: Vec<DVector<f64>>,
    /// `cross[a * j + b] = sum_i x1_ia x2_ib'`.
    cross: Vec<DMatrix<f64>>,
    /// `gy[a * j + b] = sum_i x1_ia y_ib`.
    gy: Vec<DVector<f64>>,
}

/// Session-pair cross moments that make `W(V)` and `G(V)` cheap to rebuild
/// for any working correlation and dispersion.
#[derive(Debug, Clone)]
pub struct MomentCache {
    k: usize,
    n: usize,
    total_sessions: usize,
    groups: Vec<SessionGroup>,
}

impl MomentCache {
    pub fn new(d: &Dataset, pm: &PropensityModel) -> Result<Self> {
        check_propensity(d, pm)?;
        let k = d.k();
        let mut by_j: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, s) in d.subjects().iter().enumerate() {
            match by_j.iter_mut().find(|(j, _)| *j == s.sessions()) {
                Some((_, m)) => m.push(i),
                None => by_j.push((s.sessions(), vec![i])),
            }
        }
        by_j.sort_by_key(|(j, _)| *j);
        let groups = by_j
            .into_iter()
            .map(|(j, members)| {
                let ng = members.len();
                let mut x1 = vec![DMatrix::zeros(ng, 2 * k); j];
                let mut x2 = vec![DMatrix::zeros(ng, 2 * k); j];
                let mut y = vec![DVector::zeros(ng); j];
                for (r, &i) in members.iter().enumerate() {
                    let s = &d.subjects()[i];
                    let e = &pm.fitted[i];
                    for a in 0..j {
                        for c in 0..k {
                            let h = s.h[(a, c)];
                            x1[a][(r, c)] = h;
                            x2[a][(r, c)] = h;
                            x1[a][(r, k + c)] = (s.a[a] - e[a]) * h;
                            x2[a][(r, k + c)] = s.a[a] * h;
                        }
                        y[a][r] = s.y[a];
                    }
                }
                let pairs: Vec<(usize, usize)> =
                    (0..j).flat_map(|a| (0..j).map(move |b| (a, b))).collect();
                let products: Vec<(DMatrix<f64>, DVector<f64>)> = pairs
                    .par_iter()
                    .map(|&(a, b)| (x1[a].tr_mul(&x2[b]), x1[a].tr_mul(&y[b])))
                    .collect();
                let (cross, gy) = products.into_iter().unzip();
                SessionGroup {
                    j,
                    members,
                    x1,
                    x2,
                    y,
                    cross,
                    gy,
                }
            })
            .collect();
        Ok(MomentCache {
            k,
            n: d.n(),
            total_sessions: d.total_sessions(),
            groups,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total_sessions(&self) -> usize {
        self.total_sessions
    }

    pub fn session_counts(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.j).collect()
    }

    /// Full-model `W` and `G` for `V = sigma2 R`.
    pub fn assemble(&self, corr: &WorkingCorrelation, sigma2: f64) -> Result<MomentMatrices> {
        if !(sigma2 > 0.0) {
            return Err(PegError::InvalidParameter(format!("sigma2 = {sigma2} must be positive")));
        }
        let p = 2 * self.k;
        let mut w = DMatrix::zeros(p, p);
        let mut g = DVector::zeros(p);
        for grp in &self.groups {
            let (_, rinv) = corr.materialize(grp.j)?;
            for a in 0..grp.j {
                for b in 0..grp.j {
                    let c = rinv[(a, b)];
                    if c != 0.0 {
                        w += &grp.cross[a * grp.j + b] * c;
                        g.axpy(c, &grp.gy[a * grp.j + b], 1.0);
                    }
                }
            }
        }
        let scale = 1.0 / (self.n as f64 * sigma2);
        Ok(MomentMatrices {
            w: w * scale,
            g: g * scale,
            model: ModelIndexSet::full(self.k),
            k: self.k,
        })
    }

    /// Residual vectors `y_i - X2_i theta` in dataset order.
    pub fn residuals(&self, theta: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(0); self.n];
        for grp in &self.groups {
            let fitted: Vec<DVector<f64>> =
                (0..grp.j).map(|a| &grp.y[a] - &grp.x2[a] * theta).collect();
            for (r, &i) in grp.members.iter().enumerate() {
                out[i] = DVector::from_fn(grp.j, |a, _| fitted[a][r]);
            }
        }
        out
    }

    /// Residuals that replace the blip of `reference` by the one of `theta`
    /// through the propensity-centred treatment:
    /// `y - X2 theta_ref + (a - e).H (psi_ref - psi)`.
    pub fn centered_residuals(&self, reference: &DVector<f64>, theta: &DVector<f64>) -> Vec<DVector<f64>> {
        let k = self.k;
        let mut shift = DVector::zeros(2 * k);
        for m in 0..k {
            shift[k + m] = reference[k + m] - theta[k + m];
        }
        let mut out = vec![DVector::zeros(0); self.n];
        for grp in &self.groups {
            let fitted: Vec<DVector<f64>> = (0..grp.j)
                .map(|a| &grp.y[a] - &grp.x2[a] * reference + &grp.x1[a] * &shift)
                .collect();
            for (r, &i) in grp.members.iter().enumerate() {
                out[i] = DVector::from_fn(grp.j, |a, _| fitted[a][r]);
            }
        }
        out
    }

    /// Per-subject scores `X1_i' V^-1 e_i` on all `2K` coordinates, in dataset
    /// order, as the rows of an `n x 2K` matrix.
    pub fn scores(
        &self,
        theta: &DVector<f64>,
        corr: &WorkingCorrelation,
        sigma2: f64,
    ) -> Result<DMatrix<f64>> {
        let p = 2 * self.k;
        let mut out = DMatrix::zeros(self.n, p);
        for grp in &self.groups {
            let (_, rinv) = corr.materialize(grp.j)?;
            let rinv = rinv / sigma2;
            let res: Vec<DVector<f64>> =
                (0..grp.j).map(|a| &grp.y[a] - &grp.x2[a] * theta).collect();
            // weighted residuals u_a = sum_b Vinv[a, b] e_b, per member
            let ng = grp.members.len();
            let mut acc = DMatrix::zeros(ng, p);
            for a in 0..grp.j {
                let mut u = DVector::zeros(ng);
                for b in 0..grp.j {
                    u.axpy(rinv[(a, b)], &res[b], 1.0);
                }
                let mut rows = grp.x1[a].clone();
                for (r, ur) in u.iter().enumerate() {
                    rows.row_mut(r).scale_mut(*ur);
                }
                acc += rows;
            }
            for (r, &i) in grp.members.iter().enumerate() {
                out.row_mut(i).copy_from(&acc.row(r));
            }
        }
        Ok(out)
    }
}
