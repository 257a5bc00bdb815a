//! Oriented surface points: motion-compensated returns summarized per grid
//! cell by an intensity-weighted centroid, covariance and normal.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::filtering::FilteredPoint;
use crate::pose::{Pose2, Twist2};

/// Absolute eigenvalue floor for surface covariances, m².
pub const COV_FLOOR_ABS: f64 = 1e-6;
/// Eigenvalue floor relative to the largest eigenvalue.
pub const COV_FLOOR_REL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Grid cell side, meters.
    pub resolution: f64,
    /// Minimum returns per cell.
    pub n_min: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            resolution: 3.0,
            n_min: 6,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(format!("features.resolution must be > 0, got {}", self.resolution));
        }
        if self.n_min == 0 {
            return Err("features.n_min must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub mean: Vector2<f64>,
    /// Regularized, positive definite.
    pub covariance: Matrix2<f64>,
    /// Unit eigenvector of the smallest covariance eigenvalue.
    pub normal: Vector2<f64>,
    pub support: usize,
    pub intensity_sum: f64,
    pub cell: (i64, i64),
}

/// The sparse surface representation of one sweep, in the sensor frame
/// `frame_pose` refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<SurfacePoint>,
    pub frame_pose: Pose2,
    pub resolution: f64,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `pose` to every mean, covariance and normal.
    pub fn transformed(&self, pose: &Pose2) -> SurfacePointSet {
        let r = pose.rotation();
        SurfacePointSet {
            points: self
                .points
                .iter()
                .map(|p| SurfacePoint {
                    mean: pose.transform_point(&p.mean),
                    covariance: r * p.covariance * r.transpose(),
                    normal: r * p.normal,
                    ..p.clone()
                })
                .collect(),
            frame_pose: self.frame_pose,
            resolution: self.resolution,
        }
    }
}

/// Eigen-decomposition of a symmetric 2×2 matrix: `(λ_max, λ_min, major_axis)`.
pub fn sym_eigen(m: &Matrix2<f64>) -> (f64, f64, Vector2<f64>) {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let phi = 0.5 * (2.0 * b).atan2(a - c);
    (mid + rad, mid - rad, Vector2::new(phi.cos(), phi.sin()))
}

/// Re-expresses every point in the sensor frame at `t_ref`, assuming the
/// sensor moved with constant body twist `twist` during the sweep.
pub fn motion_compensate(points: &[FilteredPoint], twist: &Twist2, t_ref: f64) -> Vec<FilteredPoint> {
    points
        .iter()
        .map(|p| {
            let at_t = Pose2::exp(&twist.scale(p.time - t_ref));
            FilteredPoint {
                position: at_t.transform_point(&p.position),
                ..*p
            }
        })
        .collect()
}

#[inline]
pub fn cell_of(p: &Vector2<f64>, resolution: f64) -> (i64, i64) {
    ((p.x / resolution).floor() as i64, (p.y / resolution).floor() as i64)
}

/// Summarizes `points` on a grid anchored at the sensor origin. Cells with
/// fewer than `n_min` returns are dropped. Output is sorted by cell index.
pub fn compute_surface_points(points: &[FilteredPoint], resolution: f64, n_min: usize) -> SurfacePointSet {
    let mut keyed: Vec<((i64, i64), usize)> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.position.x.is_finite() && p.position.y.is_finite() && p.intensity > 0.0)
        .map(|(i, p)| (cell_of(&p.position, resolution), i))
        .collect();
    keyed.sort_unstable();

    let mut out = Vec::new();
    for group in keyed.chunk_by(|a, b| a.0 == b.0) {
        if group.len() < n_min.max(1) {
            continue;
        }
        let members = group.iter().map(|&(_, i)| &points[i]);
        if let Some(sp) = summarize(members, group[0].0) {
            out.push(sp);
        }
    }
    SurfacePointSet {
        points: out,
        frame_pose: Pose2::IDENTITY,
        resolution,
    }
}

fn summarize<'a>(members: impl Iterator<Item = &'a FilteredPoint> + Clone, cell: (i64, i64)) -> Option<SurfacePoint> {
    let mut w_sum = 0.0;
    let mut weighted = Vector2::zeros();
    let mut n = 0usize;
    for p in members.clone() {
        let w = p.intensity as f64;
        w_sum += w;
        weighted += p.position * w;
        n += 1;
    }
    if w_sum <= 0.0 {
        return None;
    }
    let mean = weighted / w_sum;
    let mut scatter = Matrix2::zeros();
    for p in members {
        let d = p.position - mean;
        scatter += d * d.transpose() * p.intensity as f64;
    }
    // weighted second moment with a Bessel factor on the sample count
    let bessel = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
    let raw = scatter / w_sum * bessel;

    let (l_max, l_min, major) = sym_eigen(&raw);
    if !(l_max.is_finite() && l_min.is_finite()) {
        return None;
    }
    let floor = COV_FLOOR_ABS.max(COV_FLOOR_REL * l_max);
    let minor = Vector2::new(-major.y, major.x);
    let covariance = major * major.transpose() * l_max.max(floor) + minor * minor.transpose() * l_min.max(floor);

    Some(SurfacePoint {
        mean,
        covariance,
        normal: orient_normal(minor, &mean),
        support: n,
        intensity_sum: w_sum,
        cell,
    })
}

// Points the normal toward the sensor origin; when the normal is
// perpendicular to the line of sight, fall back to +y (then +x).
fn orient_normal(n: Vector2<f64>, mean: &Vector2<f64>) -> Vector2<f64> {
    let toward = -n.dot(mean);
    let scale = mean.norm().max(1.0);
    if toward.abs() > 1e-12 * scale {
        if toward < 0.0 {
            -n
        } else {
            n
        }
    } else if n.y < 0.0 || (n.y == 0.0 && n.x < 0.0) {
        -n
    } else {
        n
    }
}
