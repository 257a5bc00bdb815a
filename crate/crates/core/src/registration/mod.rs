//! Scan-to-multi-keyframe registration.
//!
//! The current surface-point set is aligned against every keyframe in the
//! queue at once by minimizing
//!
//! ```text
//!   Σ_k Σ_(i,j)∈C_k  w_ij · ρ( g(m_j^k, m_i, x) )
//! ```
//!
//! over the world pose `x` of the current sweep, where `C_k` associates each
//! current point with its nearest keyframe point, `w_ij` is a normal-alignment
//! weight and `ρ` a robust loss.

mod hash_grid;
mod loss;
mod residual;
mod solver;

pub use hash_grid::{nearest_within, nearest_within_brute_force, HashGrid};
pub use loss::{LossKind, RobustLoss};
pub use residual::{invert_spd, residual_g, similarity_weight, Residual, ResidualMetric};
pub use solver::{
    associate, evaluate_cost, solve, CoarseToFineSchedule, Correspondence, FixedAssociation, SolveReport, Target,
    COARSE_ITERATIONS, MIN_CORRESPONDENCES, UPDATE_TOLERANCE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("query radius {radius} m exceeds hash-grid cell size {cell_size} m")]
    RadiusExceedsCell { radius: f64, cell_size: f64 },
    #[error("combined covariance is not positive definite")]
    SingularCovariance,
    #[error("degenerate registration ({} correspondences)", .0.correspondences)]
    Degenerate(SolveReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub metric: ResidualMetric,
    pub huber_delta: f64,
    pub cauchy_scale: f64,
    /// Huber with a wide radius first, then Cauchy with a narrow one.
    pub ctf_enabled: bool,
    pub max_outer: usize,
    pub radius_coarse: f64,
    pub radius_fine: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            metric: ResidualMetric::PointToDistribution,
            huber_delta: 0.1,
            cauchy_scale: 0.1,
            ctf_enabled: true,
            max_outer: 8,
            radius_coarse: 6.0,
            radius_fine: 3.0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("reg.huber_delta", self.huber_delta),
            ("reg.cauchy_scale", self.cauchy_scale),
            ("reg.radius_coarse", self.radius_coarse),
            ("reg.radius_fine", self.radius_fine),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.max_outer == 0 {
            return Err("reg.max_outer must be >= 1".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> CoarseToFineSchedule {
        CoarseToFineSchedule::from_config(self)
    }
}
