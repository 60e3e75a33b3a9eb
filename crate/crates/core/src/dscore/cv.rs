//! Subject-level cross-validation of the weight penalty `lambda_w`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::weights::{partition, weights_from_info, WeightMethod};
use super::ScoreDecomposition;
use crate::error::{PegError, Result};
use crate::linalg::{log_space, sup_norm};
use crate::peg::tuning::argmin_prefer_larger;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_CV_GRID_LEN: usize = 20;

/// Training and validation information matrices per fold.
#[derive(Debug, Clone)]
pub struct CvFolds {
    pub train: Vec<DMatrix<f64>>,
    pub val: Vec<DMatrix<f64>>,
}

impl CvFolds {
    /// Random balanced assignment of subjects to `folds` groups.
    pub fn new(sd: &ScoreDecomposition, folds: usize, seed: u64) -> Result<Self> {
        let n = sd.n();
        if folds < 2 || folds > n {
            return Err(PegError::InvalidParameter(format!(
                "{folds} folds for {n} subjects; need 2 <= folds <= n"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (pos, &i) in perm.iter().enumerate() {
            assignment[i] = pos % folds;
        }
        Self::from_assignment(sd, &assignment)
    }

    /// Folds from an explicit subject-to-fold map (labels `0..F`).
    pub fn from_assignment(sd: &ScoreDecomposition, assignment: &[usize]) -> Result<Self> {
        let n = sd.n();
        if assignment.len() != n {
            return Err(PegError::Dimension("fold assignment length differs from n".into()));
        }
        let folds = assignment.iter().max().map_or(0, |m| m + 1);
        let dim = sd.dim();
        let mut sums = vec![DMatrix::zeros(dim, dim); folds];
        let mut counts = vec![0usize; folds];
        for (i, &f) in assignment.iter().enumerate() {
            let row = sd.scores.row(i);
            sums[f] += row.transpose() * row;
            counts[f] += 1;
        }
        if counts.iter().any(|&c| c == 0 || c == n) {
            return Err(PegError::InvalidParameter("every fold needs training and validation subjects".into()));
        }
        let total: DMatrix<f64> = sums.iter().fold(DMatrix::zeros(dim, dim), |a, s| a + s);
        let train = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| (&total - s) / (n - c) as f64)
            .collect();
        let val = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        Ok(CvFolds { train, val })
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_w: f64,
    pub grid: Vec<f64>,
    /// Summed validation loss per grid value; `None` when a fold failed.
    pub loss: Vec<Option<f64>>,
}

/// 20 log-spaced values on `[0.001, 1] * ||I_nk||_inf`.
pub fn default_cv_grid(sd: &ScoreDecomposition, k: usize) -> Vec<f64> {
    let (_, b) = partition(&sd.info, k);
    let top = sup_norm(b.iter());
    if top > 0.0 {
        log_space(1e-3 * top, top, DEFAULT_CV_GRID_LEN)
    } else {
        vec![0.0]
    }
}

/// `w' I_nn w - 2 w' I_nk` on validation information.
pub fn validation_loss(val: &DMatrix<f64>, k: usize, w: &DVector<f64>) -> f64 {
    let (q, b) = partition(val, k);
    w.dot(&(&q * w)) - 2.0 * w.dot(&b)
}

pub fn cv_select_lambda_w(
    k: usize,
    method: WeightMethod,
    grid: &[f64],
    folds: &CvFolds,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(PegError::EmptyGrid);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let loss: Vec<Option<f64>> = grid
        .iter()
        .map(|&lambda| {
            let mut total = 0.0;
            for (train, val) in folds.train.iter().zip(&folds.val) {
                let w = weights_from_info(train, k, method, lambda).ok()?;
                total += validation_loss(val, k, &w.vector());
            }
            Some(total)
        })
        .collect();
    let best = argmin_prefer_larger(&loss).ok_or(PegError::NoConvergence)?;
    Ok(CvResult {
        lambda_w: grid[best],
        grid,
        loss,
    })
}
