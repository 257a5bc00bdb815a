//! Residual metrics between a keyframe surface point and a transformed
//! current surface point, with analytic derivatives.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, RowVector3, Vector2};
use serde::{Deserialize, Serialize};

use super::RegistrationError;
use crate::features::SurfacePoint;
use crate::pose::{rot_deriv, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualMetric {
    #[serde(rename = "p2p")]
    PointToPoint,
    #[serde(rename = "p2l")]
    PointToLine,
    #[serde(rename = "p2d")]
    PointToDistribution,
}

impl FromStr for ResidualMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p2p" => Ok(Self::PointToPoint),
            "p2l" => Ok(Self::PointToLine),
            "p2d" => Ok(Self::PointToDistribution),
            _ => Err(format!("unknown metric `{s}` (expected p2p, p2l or p2d)")),
        }
    }
}

impl fmt::Display for ResidualMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PointToPoint => "p2p",
            Self::PointToLine => "p2l",
            Self::PointToDistribution => "p2d",
        })
    }
}

/// Scalar residual `g` with its derivatives with respect to `(x, y, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub value: f64,
    /// ∂g/∂(x, y, θ); zero where `g` is not differentiable (g = 0).
    pub jacobian: RowVector3<f64>,
    /// ½∇(g²), which stays smooth at g = 0.
    pub half_grad_sq: RowVector3<f64>,
    /// Gauss-Newton approximation of ½∇²(g²).
    pub gauss_newton: Matrix3<f64>,
}

#[inline]
fn point_jacobian(pose: &Pose2, source: &Vector2<f64>) -> Matrix2x3<f64> {
    let dr = rot_deriv(pose.theta) * source;
    Matrix2x3::new(1.0, 0.0, dr.x, 0.0, 1.0, dr.y)
}

/// Distance between `target` and `source` after mapping `source` by `pose`.
///
/// * point-to-point: `‖d‖`
/// * point-to-line: `|n_target · d|`
/// * point-to-distribution: `sqrt(dᵀ Σ⁻¹ d)` with
///   `Σ = Σ_target + R Σ_source Rᵀ`
///
/// where `d = R·source.mean + t − target.mean`.
pub fn residual_g(
    metric: ResidualMetric,
    target: &SurfacePoint,
    source: &SurfacePoint,
    pose: &Pose2,
) -> Result<Residual, RegistrationError> {
    let r = pose.rotation();
    let d = r * source.mean + pose.translation() - target.mean;
    let jp = point_jacobian(pose, &source.mean);

    match metric {
        ResidualMetric::PointToPoint => {
            let g = d.norm();
            let half_grad_sq = d.transpose() * jp;
            let jacobian = if g > 0.0 { half_grad_sq / g } else { RowVector3::zeros() };
            Ok(Residual {
                value: g,
                jacobian,
                half_grad_sq,
                gauss_newton: jp.transpose() * jp,
            })
        }
        ResidualMetric::PointToLine => {
            let e = target.normal.dot(&d);
            let row = target.normal.transpose() * jp;
            Ok(Residual {
                value: e.abs(),
                jacobian: if e == 0.0 {
                    RowVector3::zeros()
                } else {
                    row * e.signum()
                },
                half_grad_sq: row * e,
                gauss_newton: row.transpose() * row,
            })
        }
        ResidualMetric::PointToDistribution => {
            let rs = r * source.covariance;
            let sigma = target.covariance + rs * r.transpose();
            let w = invert_spd(&sigma).ok_or(RegistrationError::SingularCovariance)?;
            let wd = w * d;
            let q = d.dot(&wd).max(0.0);
            let g = q.sqrt();
            // ∂Σ/∂θ = R'ΣsRᵀ + RΣsR'ᵀ
            let dr = rot_deriv(pose.theta);
            let dsigma = dr * source.covariance * r.transpose() + rs * dr.transpose();
            let mut half_grad_sq = wd.transpose() * jp;
            half_grad_sq[2] -= 0.5 * wd.dot(&(dsigma * wd));
            let jacobian = if g > 0.0 { half_grad_sq / g } else { RowVector3::zeros() };
            Ok(Residual {
                value: g,
                jacobian,
                half_grad_sq,
                gauss_newton: jp.transpose() * w * jp,
            })
        }
    }
}

/// Inverse of a symmetric positive definite 2×2 matrix.
pub fn invert_spd(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !(det.is_finite() && det > 0.0 && m[(0, 0)] > 0.0) {
        return None;
    }
    let inv = Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det;
    Some(0.5 * (inv + inv.transpose()))
}

/// Normal-alignment weight `(½(1 + |n_a · n_b|))²`: 1 for parallel normals,
/// ¼ for perpendicular ones.
pub fn similarity_weight(a: &SurfacePoint, b: &SurfacePoint) -> f64 {
    similarity_from_normals(&a.normal, &b.normal)
}

#[inline]
pub(crate) fn similarity_from_normals(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let s = 0.5 * (1.0 + a.dot(b).abs().min(1.0));
    s * s
}
