//! SE(2) poses and planar twists.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle to (-π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Rotation matrix for `theta`.
#[inline]
pub fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rot`] with respect to `theta`.
#[inline]
pub fn rot_deriv(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Rigid planar transform `(x, y, theta)`, with `theta` kept in (-π, π].
///
/// Composition `a.compose(&b)` applies `b` first, then `a`; a pose maps
/// points from its own frame into the parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        rot(self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = self.rotation() * other.translation() + self.translation();
        Pose2::new(t.x, t.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let t = -(self.rotation().transpose() * self.translation());
        Pose2::new(t.x, t.y, -self.theta)
    }

    /// `self⁻¹ ∘ other`: the pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.translation() - other.translation()).norm()
    }

    /// SE(2) exponential of a twist integrated over unit time.
    pub fn exp(twist: &Twist2) -> Pose2 {
        let w = twist.omega;
        let v = Vector2::new(twist.vx, twist.vy);
        let t = left_jacobian(w) * v;
        Pose2::new(t.x, t.y, w)
    }

    /// SE(2) logarithm; inverse of [`Pose2::exp`] for |theta| < π.
    pub fn log(&self) -> Twist2 {
        let w = self.theta;
        let v = left_jacobian(w).try_inverse().unwrap_or_else(Matrix2::identity) * self.translation();
        Twist2::new(v.x, v.y, w)
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4}°)", self.x, self.y, self.theta.to_degrees())
    }
}

// V(w) such that exp((v, w)).translation = V(w) v.
fn left_jacobian(w: f64) -> Matrix2<f64> {
    let (a, b) = if w.abs() < 1e-6 {
        let w2 = w * w;
        (1.0 - w2 / 6.0, w / 2.0 - w * w2 / 24.0)
    } else {
        (w.sin() / w, (1.0 - w.cos()) / w)
    };
    Matrix2::new(a, -b, b, a)
}

/// Body-frame velocity (vx, vy in m/s, omega in rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2 {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2 {
    pub const ZERO: Twist2 = Twist2 {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn scale(&self, s: f64) -> Twist2 {
        Twist2::new(self.vx * s, self.vy * s, self.omega * s)
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }
}
