//! Per-family feature scales measured on training data.

use serde::{Deserialize, Serialize};

use super::GraphState;
use crate::error::{Error, Result};

/// Maximum magnitudes of each input feature family, plus the scales used to
/// express per-frame targets in the loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// Velocity scale (m/s).
    pub v: f64,
    /// Spin scale (rad/s).
    pub omega: f64,
    /// Edge-length scale (m).
    pub dx: f64,
    /// Per-frame velocity change scale (m/s).
    pub dv: f64,
    /// Per-frame spin change scale (rad/s).
    pub domega: f64,
    /// Per-frame displacement scale (m).
    pub dx_step: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { v: 1.0, omega: 1.0, dx: 1.0, dv: 1.0, domega: 1.0, dx_step: 1.0 }
    }
}

/// Replaces a non-positive or non-finite scale with 1.
pub fn positive_or_one(x: f64) -> f64 {
    if x > 0.0 && x.is_finite() {
        x
    } else {
        1.0
    }
}

impl Normalizer {
    pub fn scales(&self) -> [f64; 6] {
        [self.v, self.omega, self.dx, self.dv, self.domega, self.dx_step]
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales().iter().all(|&s| s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("normalizer scales must be positive and finite: {self:?}")))
        }
    }

    /// Divides velocities by `v` and spins by `omega`. Positions stay in metres.
    pub fn normalize(&self, g: &GraphState) -> Result<GraphState> {
        self.validate()?;
        if g.normalized {
            return Err(Error::InvalidInput("graph is already normalized".into()));
        }
        let mut out = g.clone();
        for n in &mut out.nodes {
            n.v = n.v / self.v;
            n.v_prev = n.v_prev / self.v;
            n.omega = n.omega / self.omega;
            n.omega_prev = n.omega_prev / self.omega;
        }
        out.normalized = true;
        Ok(out)
    }
}
