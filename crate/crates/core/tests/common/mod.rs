//! Oracles and fixtures shared by the integration tests. Everything here is
//! written independently of the library code it checks.

#![allow(dead_code)]

use cfear::features::{SurfacePoint, SurfacePointSet};
use cfear::filtering::FilterConfig;
use cfear::registration::{residual_g, ResidualMetric};
use cfear::scan_io::PolarScan;
use cfear::Pose2;
use nalgebra::{Matrix2, Vector2, Vector3};
use rand::Rng;

/// Full sort per azimuth: `(azimuth, bin)` in output order.
pub fn filter_oracle(scan: &PolarScan, cfg: &FilterConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..scan.n_azimuths() {
        let row = scan.row(a);
        let mut cand: Vec<(f32, usize)> = row
            .iter()
            .enumerate()
            .filter(|(b, v)| {
                let r = scan.range_offset() + (*b as f64 + 0.5) * scan.range_resolution();
                **v > cfg.z_min && r >= cfg.r_min
            })
            .map(|(b, v)| (*v, b))
            .collect();
        cand.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        out.extend(cand.into_iter().take(cfg.k).map(|(_, b)| (a, b)));
    }
    out
}

/// Linear-scan nearest neighbor within `radius`, lowest index on ties.
pub fn brute_nearest(points: &[Vector2<f64>], q: &Vector2<f64>, radius: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
        if d <= radius {
            match best {
                Some((bd, _)) if bd <= d => {}
                _ => best = Some((d, i)),
            }
        }
    }
    best.map(|b| b.1)
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, lo: f64, hi: f64) -> Matrix2<f64> {
    let a = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = a.sin_cos();
    let r = Matrix2::new(c, -s, s, c);
    let d = Matrix2::new(rng.random_range(lo..hi), 0.0, 0.0, rng.random_range(lo..hi));
    r * d * r.transpose()
}

pub fn random_surface_point(rng: &mut impl Rng, extent: f64) -> SurfacePoint {
    let cov = random_spd(rng, 0.01, 2.0);
    let eig = cov.symmetric_eigen();
    let i = if eig.eigenvalues[0] <= eig.eigenvalues[1] { 0 } else { 1 };
    SurfacePoint {
        mean: Vector2::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent)),
        covariance: cov,
        normal: eig.eigenvectors.column(i).into(),
        support: 6,
        intensity_sum: 6.0,
        cell: (0, 0),
    }
}

/// Central-difference gradient of the residual value with respect to
/// `(x, y, θ)`.
pub fn fd_jacobian(
    metric: ResidualMetric,
    target: &SurfacePoint,
    source: &SurfacePoint,
    pose: &Pose2,
    h: f64,
) -> Vector3<f64> {
    let g = |p: Pose2| residual_g(metric, target, source, &p).unwrap().value;
    let mut j = Vector3::zeros();
    for k in 0..3 {
        let mut plus = [pose.x, pose.y, pose.theta];
        let mut minus = plus;
        plus[k] += h;
        minus[k] -= h;
        j[k] = (g(Pose2 {
            x: plus[0],
            y: plus[1],
            theta: plus[2],
        }) - g(Pose2 {
            x: minus[0],
            y: minus[1],
            theta: minus[2],
        })) / (2.0 * h);
    }
    j
}

/// Surface points of the current sweep expressed in a frame moved by `t`,
/// so that aligning them against `set` yields exactly `t`.
pub fn moved_by(set: &SurfacePointSet, t: &Pose2) -> SurfacePointSet {
    let inv = t.inverse();
    let r = inv.rotation();
    SurfacePointSet {
        points: set
            .points
            .iter()
            .map(|p| SurfacePoint {
                mean: inv.transform_point(&p.mean),
                covariance: r * p.covariance * r.transpose(),
                normal: r * p.normal,
                ..*p
            })
            .collect(),
        frame_pose: set.frame_pose,
        resolution: set.resolution,
    }
}

pub fn pose_error(a: &Pose2, b: &Pose2) -> (f64, f64) {
    let d = a.between(b);
    (d.translation().norm(), d.theta.abs())
}
