//! Universal post-selection inference: simultaneous regions over all
//! submodels from joint multiplier-bootstrap quantiles of the `G` and `W`
//! fluctuations, projected onto coordinate intervals for the selected model.

pub mod bootstrap;
pub mod intervals;
pub mod zvec;

pub use bootstrap::{multiplier_bootstrap, replicate_norms, BootstrapQuantiles, ReplicateNorms};
pub use intervals::{eigen_diagnostic, uposi_intervals, uposi_region_check, EigenDiagnostic, UposiReport};
pub use zvec::{build_z_vectors, z_dimension, ZVectors};

use crate::data::Dataset;
use crate::error::Result;
use crate::peg::{moment_matrices, PenalizedFit};
use crate::propensity::PropensityModel;

/// Z-vectors, bootstrap and intervals for a fitted model, all at the fit's
/// working correlation and dispersion.
pub fn uposi(
    d: &Dataset,
    pm: &PropensityModel,
    fit: &PenalizedFit,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<UposiReport> {
    let z = build_z_vectors(d, pm, &fit.corr, fit.sigma2)?;
    let q = multiplier_bootstrap(&z, replicates, alpha, seed)?;
    let mm = moment_matrices(d, pm, &fit.corr, fit.sigma2, &fit.selected)?;
    uposi_intervals(fit, &mm, &q, alpha)
}
