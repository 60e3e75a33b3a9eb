//! Multiplier bootstrap for the joint sup-norm quantiles of the centred
//! G- and W-contributions.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::zvec::ZVectors;
use crate::error::{PegError, Result};
use crate::linalg::sup_norm;
use crate::par::*;

pub const MIN_REPLICATES: usize = 200;
const CHUNK: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapQuantiles {
    pub c_g: f64,
    pub c_w: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Common multiplier applied to both medians.
    pub t_hat: f64,
    pub m_g: f64,
    pub m_w: f64,
    /// Set when a median was zero (constant contributions).
    pub degenerate: bool,
}

/// Sup norms of blocks I and II for every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateNorms {
    pub g: Vec<f64>,
    pub w: Vec<f64>,
    pub n: usize,
}

impl ReplicateNorms {
    /// Fraction of replicates inside the box `(sqrt(n) C_G, sqrt(n) C_W)`.
    pub fn box_fraction(&self, q: &BootstrapQuantiles) -> f64 {
        let root = (self.n as f64).sqrt();
        let inside = self
            .g
            .iter()
            .zip(&self.w)
            .filter(|(g, w)| **g <= root * q.c_g && **w <= root * q.c_w)
            .count();
        inside as f64 / self.g.len() as f64
    }
}

/// Standard-normal multipliers for replicate `j`, from stream `j` of `seed`.
pub fn multipliers(seed: u64, replicate: u64, n: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

/// `g_j = ||S*_j(I)||_inf`, `w_j = ||S*_j(II)||_inf` with
/// `S*_j = n^-1/2 sum_i r_ij (Z_i - Zbar)`.
pub fn replicate_norms(z: &ZVectors, replicates: usize, seed: u64) -> Result<ReplicateNorms> {
    let n = z.n();
    if n < 2 {
        return Err(PegError::Dimension("bootstrap needs at least two subjects".into()));
    }
    // shift by the first row before centring so equal rows centre to exact zeros
    let first = z.z.row(0).clone_owned();
    let mut centred = z.z.clone();
    for mut row in centred.row_iter_mut() {
        row -= &first;
    }
    let mean = centred.row_mean();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let split = z.block_one_len();
    let scale = 1.0 / (n as f64).sqrt();
    let chunks: Vec<(usize, usize)> = (0..replicates)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(replicates)))
        .collect();
    let parts: Vec<Vec<(f64, f64)>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut r = DMatrix::zeros(hi - lo, n);
            for (row, j) in (lo..hi).enumerate() {
                let m = multipliers(seed, j as u64, n);
                r.row_mut(row).copy_from(&m.transpose());
            }
            let s = r * &centred * scale;
            s.row_iter()
                .map(|row| {
                    let g = sup_norm(row.columns(0, split).iter());
                    let w = sup_norm(row.columns(split, row.len() - split).iter());
                    (g, w)
                })
                .collect()
        })
        .collect();
    let (g, w) = parts.into_iter().flatten().unzip();
    Ok(ReplicateNorms { g, w, n })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// Smallest value `c` with `sqrt(n) * c >= target` in floating point.
fn scaled_cover(target: f64, root_n: f64) -> f64 {
    let mut c = target / root_n;
    while root_n * c < target {
        c = c.next_up();
    }
    c
}

/// Median-scaled joint quantiles: `t` is the `ceil((1 - alpha) R)`-th order
/// statistic of `max(g_j / m_G, w_j / m_W)`, and `C = t m / sqrt(n)` per block.
pub fn quantiles_from_norms(norms: &ReplicateNorms, alpha: f64, seed: u64) -> Result<BootstrapQuantiles> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PegError::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let r = norms.g.len();
    if r == 0 {
        return Err(PegError::InvalidParameter("no bootstrap replicates".into()));
    }
    let m_g = median(&norms.g);
    let m_w = median(&norms.w);
    let ratio = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    let joint: Vec<f64> = norms
        .g
        .iter()
        .zip(&norms.w)
        .map(|(&g, &w)| ratio(g, m_g).max(ratio(w, m_w)))
        .collect();
    let mut ratios = joint.clone();
    ratios.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * r as f64).ceil() as usize;
    let t_hat = ratios[rank.clamp(1, r) - 1];
    // `g / m <= t` does not imply `g <= t m` after rounding, so the box is
    // widened to the largest norm among the replicates counted inside
    let inside_max = |v: &[f64]| {
        v.iter()
            .zip(&joint)
            .filter(|(_, &q)| q <= t_hat)
            .fold(0.0_f64, |acc, (&x, _)| acc.max(x))
    };
    let root = (norms.n as f64).sqrt();
    let degenerate = m_g == 0.0 || m_w == 0.0;
    if degenerate {
        warn!("multiplier bootstrap median is zero; contributions are (nearly) constant");
    }
    // a zero median leaves that block unscaled; cover it by its own maximum
    let block = |m: f64, v: &[f64]| {
        if m > 0.0 {
            scaled_cover((t_hat * m).max(inside_max(v)), root)
        } else {
            scaled_cover(v.iter().cloned().fold(0.0, f64::max), root)
        }
    };
    Ok(BootstrapQuantiles {
        c_g: block(m_g, &norms.g),
        c_w: block(m_w, &norms.w),
        alpha,
        replicates: r,
        seed,
        t_hat,
        m_g,
        m_w,
        degenerate,
    })
}

pub fn multiplier_bootstrap(z: &ZVectors, replicates: usize, alpha: f64, seed: u64) -> Result<BootstrapQuantiles> {
    if replicates < MIN_REPLICATES {
        return Err(PegError::InvalidParameter(format!(
            "{replicates} bootstrap replicates; at least {MIN_REPLICATES} are required"
        )));
    }
    let norms = replicate_norms(z, replicates, seed)?;
    quantiles_from_norms(&norms, alpha, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_z(n: usize, k: usize, seed: u64) -> ZVectors {
        let p = super::super::zvec::z_dimension(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, p, |_, c| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * (1.0 + c as f64 / p as f64)
        });
        ZVectors { z, k }
    }

    #[test]
    fn identical_rows_give_zero_quantiles() {
        let z = ZVectors {
            z: DMatrix::from_fn(20, 6, |_, c| c as f64),
            k: 1,
        };
        let q = multiplier_bootstrap(&z, 200, 0.05, 1).unwrap();
        assert_eq!(q.c_g, 0.0);
        assert_eq!(q.c_w, 0.0);
        assert!(q.degenerate);
    }

    #[test]
    fn box_contains_at_least_one_minus_alpha() {
        let z = random_z(40, 3, 9);
        let norms = replicate_norms(&z, 333, 4).unwrap();
        for alpha in [0.01, 0.05, 0.1, 0.2, 0.5] {
            let q = quantiles_from_norms(&norms, alpha, 4).unwrap();
            assert!(norms.box_fraction(&q) >= 1.0 - alpha);
        }
    }

    #[test]
    fn quantiles_monotone_in_alpha() {
        let z = random_z(30, 2, 2);
        let norms = replicate_norms(&z, 400, 11).unwrap();
        let q05 = quantiles_from_norms(&norms, 0.05, 11).unwrap();
        let q10 = quantiles_from_norms(&norms, 0.10, 11).unwrap();
        assert!(q05.c_g >= q10.c_g && q05.c_w >= q10.c_w);
    }

    #[test]
    fn same_seed_same_quantiles() {
        let z = random_z(25, 2, 5);
        let a = multiplier_bootstrap(&z, 250, 0.05, 42).unwrap();
        let b = multiplier_bootstrap(&z, 250, 0.05, 42).unwrap();
        let c = multiplier_bootstrap(&z, 250, 0.05, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.c_g, c.c_g);
    }

    #[test]
    fn too_few_replicates() {
        let z = random_z(10, 1, 0);
        assert!(multiplier_bootstrap(&z, 199, 0.05, 0).is_err());
    }
}
