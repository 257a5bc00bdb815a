//! Robust losses on a scalar residual.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Huber,
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLoss {
    pub kind: LossKind,
    pub scale: f64,
}

impl RobustLoss {
    pub fn huber(delta: f64) -> Self {
        assert!(delta > 0.0, "Huber delta must be positive");
        Self {
            kind: LossKind::Huber,
            scale: delta,
        }
    }

    pub fn cauchy(scale: f64) -> Self {
        assert!(scale > 0.0, "Cauchy scale must be positive");
        Self {
            kind: LossKind::Cauchy,
            scale,
        }
    }

    /// ρ(r). Both losses reduce to r²/2 near zero.
    pub fn rho(&self, r: f64) -> f64 {
        let a = r.abs();
        let s = self.scale;
        match self.kind {
            LossKind::Huber if a <= s => 0.5 * r * r,
            LossKind::Huber => s * (a - 0.5 * s),
            LossKind::Cauchy => 0.5 * s * s * (r * r / (s * s)).ln_1p(),
        }
    }

    /// ρ'(r).
    pub fn derivative(&self, r: f64) -> f64 {
        let s = self.scale;
        match self.kind {
            LossKind::Huber if r.abs() <= s => r,
            LossKind::Huber => s * r.signum(),
            LossKind::Cauchy => r / (1.0 + r * r / (s * s)),
        }
    }

    /// IRLS weight ρ'(r)/r, continuous at r = 0.
    pub fn weight(&self, r: f64) -> f64 {
        let a = r.abs();
        let s = self.scale;
        match self.kind {
            LossKind::Huber if a <= s => 1.0,
            LossKind::Huber => s / a,
            LossKind::Cauchy => 1.0 / (1.0 + r * r / (s * s)),
        }
    }
}
