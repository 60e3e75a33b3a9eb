use serde::{Deserialize, Serialize};

use crate::correlation::CorrKind;
use crate::error::{PegError, Result};
use crate::inference::Method;

use super::dgp::MIN_K;

/// Settings for one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub k: usize,
    pub j: usize,
    pub tau: f64,
    pub sigma2_eps: f64,
    /// Exchangeable error correlation used to generate the data.
    pub rho: f64,
    /// Working structure used in the analysis.
    pub corstr: CorrKind,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Multiplier bootstrap replicates for UPoSI.
    pub boot: usize,
    pub cv_folds: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 500,
            k: 20,
            j: 6,
            tau: 0.3,
            sigma2_eps: 1.0,
            rho: 0.8,
            corstr: CorrKind::Exchangeable,
            reps: 50,
            seed: 0,
            methods: Method::ALL.to_vec(),
            alpha: 0.05,
            boot: 1000,
            cv_folds: 5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PegError::InvalidParameter(msg));
        if self.k < MIN_K {
            return bad(format!("K = {} is too small; the design needs K >= {MIN_K}", self.k));
        }
        if self.j < 2 {
            return bad(format!("J = {} must be at least 2", self.j));
        }
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if !(self.tau > -1.0 && self.tau < 1.0) {
            return bad(format!("tau = {} must lie in (-1, 1)", self.tau));
        }
        if !(self.sigma2_eps >= 0.0) {
            return bad(format!("sigma2_eps = {} must be >= 0", self.sigma2_eps));
        }
        if !(self.rho > -1.0 / (self.j as f64 - 1.0) && self.rho < 1.0) {
            return bad(format!("rho = {} is not a valid exchangeable correlation", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.methods.contains(&Method::Uposi) && self.boot < 200 {
            return bad(format!("boot = {} must be at least 200", self.boot));
        }
        if self.cv_folds < 2 {
            return bad(format!("cv_folds = {} must be at least 2", self.cv_folds));
        }
        Ok(())
    }
}
