//! SCAD-penalized G-estimation of `theta = (delta, psi)`.

pub mod fit;
pub mod moments;
pub mod sandwich;
pub mod scad;
pub mod tuning;

pub use fit::{penalized_g_fit, penalized_g_fit_cached, FitControls, PenalizedFit, SELECTION_THRESHOLD};
pub use moments::{g_estimate, moment_matrices, theta_coords, MomentCache, MomentMatrices};
pub use sandwich::{sandwich_ci, sandwich_covariance, SandwichEstimate};
pub use scad::{scad_derivative, ScadPenalty};
pub use tuning::{tune_lambda, TuningResult};
