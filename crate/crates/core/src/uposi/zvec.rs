//! Per-subject contributions to `G` and `W`, flattened into one vector.

use nalgebra::DMatrix;

use crate::correlation::WorkingCorrelation;
use crate::data::{Dataset, Subject};
use crate::error::{PegError, Result};
use crate::par::*;
use crate::peg::moments::row_design;
use crate::propensity::PropensityModel;

/// `n x p` matrix of subject contributions with `p = 2K^2 + 4K`.
///
/// Columns `0..2K` (block I) are `X1_i' V^-1 y_i`, whose mean is `G`. The
/// remaining columns (block II) hold four families of `W` entries over column
/// pairs `k <= k'`, in the order given by [`block_two_layout`].
#[derive(Debug, Clone)]
pub struct ZVectors {
    pub z: DMatrix<f64>,
    pub k: usize,
}

impl ZVectors {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    /// Number of block-I columns.
    pub fn block_one_len(&self) -> usize {
        2 * self.k
    }
}

/// `p = 2K + 4 (K + K(K-1)/2)`.
pub fn z_dimension(k: usize) -> usize {
    2 * k + 4 * (k + k * (k.saturating_sub(1)) / 2)
}

/// The `(row, column)` of the full `2K x 2K` matrix `W` that each block-II
/// column averages to. Families in order: `H'V^-1 H`, `H'V^-1 (a.H)`,
/// `((a-e).H)'V^-1 H`, `((a-e).H)'V^-1 (a.H)`, each over `k <= k'`.
pub fn block_two_layout(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4 * (k * (k + 1) / 2));
    for (ro, co) in [(0, 0), (0, k), (k, 0), (k, k)] {
        for a in 0..k {
            for b in a..k {
                out.push((ro + a, co + b));
            }
        }
    }
    out
}

/// Builds the Z matrix for the full model at the fitted working variance.
pub fn build_z_vectors(
    d: &Dataset,
    pm: &PropensityModel,
    corr: &WorkingCorrelation,
    sigma2: f64,
) -> Result<ZVectors> {
    if pm.fitted.len() != d.n() {
        return Err(PegError::Dimension("propensity fits do not match the dataset".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(PegError::InvalidParameter(format!("sigma2 = {sigma2} must be positive")));
    }
    let k = d.k();
    let p = z_dimension(k);
    let counts: Vec<usize> = d.subjects().iter().map(Subject::sessions).collect();
    let rinv = corr.inverses(&counts)?;
    let layout = block_two_layout(k);
    let rows: Vec<Vec<f64>> = (0..d.n())
        .into_par_iter()
        .map(|i| {
            let s = &d.subjects()[i];
            let x1 = row_design(s, &pm.fitted_for(i));
            let x2 = s.design();
            let vinv = rinv[s.sessions()].as_ref().expect("inverse materialized") / sigma2;
            let left = x1.tr_mul(&vinv);
            let g = &left * &s.y;
            let w = &left * x2;
            let mut row = Vec::with_capacity(p);
            row.extend(g.iter());
            row.extend(layout.iter().map(|&(r, c)| w[(r, c)]));
            row
        })
        .collect();
    let mut z = DMatrix::zeros(d.n(), p);
    for (i, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            z[(i, c)] = *v;
        }
    }
    Ok(ZVectors { z, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_formula() {
        assert_eq!(z_dimension(2), 16);
        assert_eq!(z_dimension(1), 6);
        for k in 1..12 {
            assert_eq!(z_dimension(k), 2 * k * k + 4 * k);
            assert_eq!(2 * k + block_two_layout(k).len(), z_dimension(k));
        }
    }
}
