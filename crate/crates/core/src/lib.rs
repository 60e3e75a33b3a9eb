//! Penalized G-estimation of proximal treatment-effect modification in
//! structural nested mean models, with post-selection inference.
//!
//! The pipeline is: load a longitudinal [`data::Dataset`], fit the treatment
//! [`propensity`] model, estimate the blip coefficients with the SCAD-penalized
//! estimating equation in [`peg`], and then build intervals for the selected
//! coefficients with one of the inference procedures in [`peg::sandwich`],
//! [`uposi`] or [`dscore`]. [`simlab`] runs the Monte-Carlo comparison.

pub mod correlation;
pub mod data;
pub mod dscore;
pub mod error;
pub mod inference;
pub mod interval;
pub mod linalg;
pub mod par;
pub mod peg;
pub mod propensity;
pub mod simlab;
pub mod uposi;

pub use correlation::{estimate_correlation, CorrKind, CorrelationEstimate, WorkingCorrelation};
pub use data::{blipped_down, load_dataset, Dataset, ModelIndexSet, Scaling, Schema, SessionRow, Subject};
pub use error::{PegError, Result};
pub use propensity::{fit_propensity, PropensityModel};
pub use inference::{Analysis, InferenceDetail, InferenceOptions, InferenceReport, Method};
