use serde::{Deserialize, Serialize};

/// Confidence interval for one blip coefficient, indexed by adjuster column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateInterval {
    pub coordinate: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CoordinateInterval {
    pub fn symmetric(coordinate: usize, estimate: f64, half_length: f64) -> Self {
        CoordinateInterval {
            coordinate,
            estimate,
            lower: estimate - half_length,
            upper: estimate + half_length,
        }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn half_length(&self) -> f64 {
        0.5 * self.length()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn excludes_zero(&self) -> bool {
        !self.covers(0.0)
    }

    /// Divides the interval by a positive scale factor.
    pub fn unscale(&self, factor: f64) -> Self {
        CoordinateInterval {
            coordinate: self.coordinate,
            estimate: self.estimate / factor,
            lower: self.lower / factor,
            upper: self.upper / factor,
        }
    }
}
