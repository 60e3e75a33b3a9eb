use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};

/// Conventional SCAD shape parameter.
pub const DEFAULT_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadPenalty {
    pub lambda: f64,
    pub a: f64,
}

impl ScadPenalty {
    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(PegError::InvalidParameter(format!("lambda = {lambda} must be >= 0")));
        }
        if !(a > 2.0 && a.is_finite()) {
            return Err(PegError::InvalidParameter(format!("SCAD a = {a} must exceed 2")));
        }
        Ok(ScadPenalty { lambda, a })
    }

    pub fn with_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, DEFAULT_A)
    }

    /// First derivative `q_lambda(t)` for `t >= 0`.
    pub fn derivative(&self, t: f64) -> f64 {
        scad_derivative(t, self)
    }
}

/// `q(t) = lambda` on `[0, lambda]`, `(a lambda - t)_+ / (a - 1)` beyond.
pub fn scad_derivative(t: f64, p: &ScadPenalty) -> f64 {
    let t = t.abs();
    if t <= p.lambda {
        p.lambda
    } else {
        (p.a * p.lambda - t).max(0.0) / (p.a - 1.0)
    }
}
