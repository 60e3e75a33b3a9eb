//! Simulation data-generating process.
//!
//! Per subject: two baseline confounders `L1, L2 ~ N(0, 1)`; per session the
//! time-varying confounders `L3..L6` and noise covariates `X1..X_{K-6}` are
//! jointly normal with AR-type covariance `tau^|r-s|` and means carried over
//! from the previous session (`0.3 l + 0.3 a` for the L's, `0.5 x` for the
//! X's; zero before the first session). Treatment is logistic in the
//! confounders, errors are exchangeable across sessions, and the outcome adds a
//! nonlinear treatment-free mean to a linear blip. `X10` is generated but left
//! out of the analysis design.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SessionRow, Subject, INTERCEPT};
use crate::error::{PegError, Result};

use super::config::SimConfig;

/// Raw covariate index of the unmeasured outcome predictor `X10`
/// (`1 + 6 + 9` in the order intercept, L1..L6, X1..).
pub const UNMEASURED_RAW: usize = 16;

/// Smallest `K` for which `X10` exists.
pub const MIN_K: usize = 16;

/// Generating coefficients on the raw covariate vector
/// `(1, L1..L6, X1..X_{K-6})` of length `K + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub beta: [f64; 7],
    /// Linear part, length `K + 1`.
    pub delta: Vec<f64>,
    /// Coefficients of `l1 l5`, `l3 l4`, `sin(l3 - l4)`, `cos(2 l5)`.
    pub delta_nonlinear: [f64; 4],
    /// Blip coefficients, length `K + 1`.
    pub psi: Vec<f64>,
}

impl TrueParams {
    pub fn standard(k: usize) -> Self {
        let raw = k + 1;
        let mut delta = vec![0.0; raw];
        delta[..7].copy_from_slice(&[1.0, 1.0, 1.2, 1.2, -0.9, 0.8, -1.0]);
        for d in delta.iter_mut().skip(7).take(20) {
            *d = 1.0;
        }
        let mut psi = vec![0.0; raw];
        psi[..7].copy_from_slice(&[1.0, 1.0, -1.0, -0.9, 0.8, 1.0, 0.0]);
        TrueParams {
            beta: [0.0, 1.0, -1.1, 1.2, 0.75, -0.9, 1.2],
            delta,
            delta_nonlinear: [-0.8, 1.0, 1.2, -1.5],
            psi,
        }
    }

    /// Blip coefficients aligned with the `K` analysis columns.
    pub fn analysis_psi(&self) -> Vec<f64> {
        self.psi
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != UNMEASURED_RAW)
            .map(|(_, v)| *v)
            .collect()
    }

    /// Treatment-free mean for one raw covariate row.
    pub fn mu(&self, raw: &[f64]) -> f64 {
        let lin: f64 = self.delta.iter().zip(raw).map(|(d, v)| d * v).sum();
        let [c1, c2, c3, c4] = self.delta_nonlinear;
        let (l1, l3, l4, l5) = (raw[1], raw[3], raw[4], raw[5]);
        lin + c1 * l1 * l5 + c2 * l3 * l4 + c3 * (l3 - l4).sin() + c4 * (2.0 * l5).cos()
    }

    /// Blip `h' psi` for one raw covariate row (before multiplying by `a`).
    pub fn blip(&self, raw: &[f64]) -> f64 {
        self.psi.iter().zip(raw).map(|(p, v)| p * v).sum()
    }

    pub fn propensity(&self, raw: &[f64]) -> f64 {
        let eta: f64 = self.beta.iter().zip(raw).map(|(b, v)| b * v).sum();
        1.0 / (1.0 + (-eta).exp())
    }
}

/// One generated session with its latent raw covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSession {
    /// `(1, L1..L6, X1..X_{K-6})`.
    pub covariates: Vec<f64>,
    pub a: f64,
    pub y: f64,
    pub propensity: f64,
}

#[derive(Debug, Clone)]
pub struct SimDraw {
    pub dataset: Dataset,
    /// True blip coefficients on the analysis columns.
    pub psi_star: Vec<f64>,
    /// Latent sessions per subject.
    pub raw: Vec<Vec<RawSession>>,
}

/// Analysis column names: intercept, L1..L6, X's other than X10.
pub fn analysis_names(k: usize) -> Vec<String> {
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..=6).map(|i| format!("L{i}")));
    names.extend((1..=k - 6).filter(|&r| r != 10).map(|r| format!("X{r}")));
    names
}

/// Random stream for replication `rep`, independent of any other stream.
pub fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draws one simulated dataset for replication `rep`.
pub fn generate_dataset(cfg: &SimConfig, tp: &TrueParams, rep: u64) -> Result<SimDraw> {
    cfg.validate()?;
    let k = cfg.k;
    if tp.delta.len() != k + 1 || tp.psi.len() != k + 1 {
        return Err(PegError::Dimension(format!(
            "true parameters have {} / {} raw coefficients, expected {}",
            tp.delta.len(),
            tp.psi.len(),
            k + 1
        )));
    }
    let mut rng = rep_rng(cfg.seed, rep);
    let dim = k - 2;
    let v_lx = DMatrix::from_fn(dim, dim, |r, s| cfg.tau.powi((r as i32 - s as i32).abs()));
    let chol_lx = v_lx
        .cholesky()
        .ok_or_else(|| PegError::NotPositiveDefinite("covariate covariance".into()))?
        .l();
    let r_eps = DMatrix::from_fn(cfg.j, cfg.j, |a, b| if a == b { 1.0 } else { cfg.rho });
    let chol_eps = r_eps
        .cholesky()
        .ok_or_else(|| PegError::NotPositiveDefinite("error correlation".into()))?
        .l();
    let sd_eps = cfg.sigma2_eps.sqrt();

    let mut subjects = Vec::with_capacity(cfg.n);
    let mut raw_all = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let l1: f64 = StandardNormal.sample(&mut rng);
        let l2: f64 = StandardNormal.sample(&mut rng);
        let z_eps = DVector::from_fn(cfg.j, |_, _| StandardNormal.sample(&mut rng));
        let eps = &chol_eps * z_eps * sd_eps;
        let mut prev = DVector::<f64>::zeros(dim);
        let mut a_prev = 0.0;
        let mut raw_rows = Vec::with_capacity(cfg.j);
        let mut rows = Vec::with_capacity(cfg.j);
        for j in 0..cfg.j {
            let mean = DVector::from_fn(dim, |r, _| {
                if r < 4 {
                    0.3 * prev[r] + 0.3 * a_prev
                } else {
                    0.5 * prev[r]
                }
            });
            let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let lx = mean + &chol_lx * z;
            let mut cov = Vec::with_capacity(k + 1);
            cov.extend_from_slice(&[1.0, l1, l2]);
            cov.extend(lx.iter());
            let p = tp.propensity(&cov);
            let u: f64 = rng.random();
            let a = if u < p { 1.0 } else { 0.0 };
            let y = tp.mu(&cov) + a * tp.blip(&cov) + eps[j];
            let h: Vec<f64> = cov
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != UNMEASURED_RAW)
                .map(|(_, v)| *v)
                .collect();
            rows.push(SessionRow { y, a, h });
            raw_rows.push(RawSession {
                covariates: cov,
                a,
                y,
                propensity: p,
            });
            prev = lx;
            a_prev = a;
        }
        subjects.push(Subject::new(format!("s{i}"), &rows)?);
        raw_all.push(raw_rows);
    }
    Ok(SimDraw {
        dataset: Dataset::new(subjects, analysis_names(k))?,
        psi_star: tp.analysis_psi(),
        raw: raw_all,
    })
}
