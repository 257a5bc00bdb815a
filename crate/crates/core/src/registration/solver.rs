//! Association, cost evaluation and the Levenberg-Marquardt solve.

use nalgebra::{Matrix2, Matrix3, RowVector3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::hash_grid::HashGrid;
use super::loss::RobustLoss;
use super::residual::{residual_g, similarity_from_normals, ResidualMetric};
use super::{RegistrationConfig, RegistrationError};
use crate::features::SurfacePointSet;
use crate::pose::{wrap_angle, Pose2};

/// Outer iterations that use the coarse Huber stage when coarse-to-fine is on.
pub const COARSE_ITERATIONS: usize = 2;
/// Outer-loop convergence threshold on the combined pose update.
pub const UPDATE_TOLERANCE: f64 = 1e-4;
pub const MAX_INNER_ITERATIONS: usize = 10;
pub const MIN_CORRESPONDENCES: usize = 6;
/// Correspondence normals all within this angle of one axis leave the
/// problem unconstrained along that axis.
pub const DEGENERATE_NORMAL_SPREAD_DEG: f64 = 10.0;

const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 3.0;
const LAMBDA_MAX: f64 = 1e10;

/// Per-outer-iteration loss and association radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseToFineSchedule {
    pub coarse_to_fine: bool,
    pub huber: RobustLoss,
    pub cauchy: RobustLoss,
    pub radius_coarse: f64,
    pub radius_fine: f64,
    pub max_outer: usize,
}

impl CoarseToFineSchedule {
    pub fn from_config(cfg: &RegistrationConfig) -> Self {
        Self {
            coarse_to_fine: cfg.ctf_enabled,
            huber: RobustLoss::huber(cfg.huber_delta),
            cauchy: RobustLoss::cauchy(cfg.cauchy_scale),
            radius_coarse: cfg.radius_coarse,
            radius_fine: cfg.radius_fine,
            max_outer: cfg.max_outer,
        }
    }

    fn in_coarse_stage(&self, outer: usize) -> bool {
        self.coarse_to_fine && outer < COARSE_ITERATIONS
    }

    pub fn loss(&self, outer: usize) -> RobustLoss {
        match (self.coarse_to_fine, self.in_coarse_stage(outer)) {
            (false, _) | (true, true) => self.huber,
            (true, false) => self.cauchy,
        }
    }

    pub fn radius(&self, outer: usize) -> f64 {
        if self.in_coarse_stage(outer) {
            self.radius_coarse
        } else {
            self.radius_fine
        }
    }

    /// Convergence is only accepted once the final stage has been reached.
    pub fn may_terminate(&self, outer: usize) -> bool {
        !self.in_coarse_stage(outer)
    }

    /// Hash-grid cell size covering every radius the schedule uses.
    pub fn cell_size(&self) -> f64 {
        if self.coarse_to_fine {
            self.radius_coarse.max(self.radius_fine)
        } else {
            self.radius_fine
        }
    }
}

/// A keyframe as seen by the solver: its world pose, its surface points in
/// its own frame, and the hash grid over them.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub pose: Pose2,
    pub set: &'a SurfacePointSet,
    pub grid: &'a HashGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub keyframe_index: usize,
    pub target_index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_cost: f64,
    pub correspondences: usize,
    pub converged: bool,
    pub degenerate: bool,
}

/// Finds, for every current point and every keyframe, the nearest keyframe
/// point within `radius` after mapping by the world pose `pose`.
pub fn associate(
    keyframes: &[Target<'_>],
    current: &SurfacePointSet,
    pose: &Pose2,
    radius: f64,
) -> Result<Vec<Correspondence>, RegistrationError> {
    let mut out = Vec::new();
    for (k, kf) in keyframes.iter().enumerate() {
        if radius > kf.grid.cell_size() {
            return Err(RegistrationError::RadiusExceedsCell {
                radius,
                cell_size: kf.grid.cell_size(),
            });
        }
        let rel = kf.pose.between(pose);
        let r = rel.rotation();
        for (i, src) in current.points.iter().enumerate() {
            let q = rel.transform_point(&src.mean);
            if let Some(j) = kf.grid.nearest_unchecked(|idx| kf.set.points[idx].mean, &q, radius) {
                let weight = similarity_from_normals(&(r * src.normal), &kf.set.points[j].normal);
                out.push(Correspondence {
                    source_index: i,
                    keyframe_index: k,
                    target_index: j,
                    weight,
                });
            }
        }
    }
    Ok(out)
}

/// Weighted robust cost of `pose` with fresh associations at `radius`.
pub fn evaluate_cost(
    metric: ResidualMetric,
    loss: &RobustLoss,
    keyframes: &[Target<'_>],
    current: &SurfacePointSet,
    pose: &Pose2,
    radius: f64,
) -> Result<(f64, Vec<Correspondence>), RegistrationError> {
    let correspondences = associate(keyframes, current, pose, radius)?;
    let problem = FixedAssociation {
        metric,
        keyframes,
        current,
        correspondences: &correspondences,
    };
    let cost = problem.cost(pose, loss)?;
    Ok((cost, correspondences))
}

/// The registration problem with correspondences held fixed.
pub struct FixedAssociation<'a> {
    pub metric: ResidualMetric,
    pub keyframes: &'a [Target<'a>],
    pub current: &'a SurfacePointSet,
    pub correspondences: &'a [Correspondence],
}

struct NormalEquations {
    hessian: Matrix3<f64>,
    gradient: Vector3<f64>,
}

impl FixedAssociation<'_> {
    pub fn cost(&self, pose: &Pose2, loss: &RobustLoss) -> Result<f64, RegistrationError> {
        let rels = self.relative_poses(pose);
        let mut cost = 0.0;
        for c in self.correspondences {
            let kf = &self.keyframes[c.keyframe_index];
            let r = residual_g(
                self.metric,
                &kf.set.points[c.target_index],
                &self.current.points[c.source_index],
                &rels[c.keyframe_index],
            )?;
            cost += c.weight * loss.rho(r.value);
        }
        Ok(cost)
    }

    fn relative_poses(&self, pose: &Pose2) -> Vec<Pose2> {
        self.keyframes.iter().map(|kf| kf.pose.between(pose)).collect()
    }

    // IRLS normal equations in world-pose coordinates.
    fn normal_equations(&self, pose: &Pose2, loss: &RobustLoss) -> Result<NormalEquations, RegistrationError> {
        let rels = self.relative_poses(pose);
        // d(rel)/d(world) = blockdiag(R_kᵀ, 1)
        let chains: Vec<Matrix3<f64>> = self
            .keyframes
            .iter()
            .map(|kf| {
                let rt = kf.pose.rotation().transpose();
                Matrix3::new(rt[(0, 0)], rt[(0, 1)], 0.0, rt[(1, 0)], rt[(1, 1)], 0.0, 0.0, 0.0, 1.0)
            })
            .collect();
        let mut hessian = Matrix3::zeros();
        let mut gradient = RowVector3::zeros();
        for c in self.correspondences {
            let k = c.keyframe_index;
            let r = residual_g(
                self.metric,
                &self.keyframes[k].set.points[c.target_index],
                &self.current.points[c.source_index],
                &rels[k],
            )?;
            let s = c.weight * loss.weight(r.value);
            let a = &chains[k];
            hessian += a.transpose() * r.gauss_newton * a * s;
            gradient += r.half_grad_sq * a * s;
        }
        Ok(NormalEquations {
            hessian,
            gradient: gradient.transpose(),
        })
    }

    /// Levenberg-Marquardt with Marquardt diagonal scaling. Returns the final
    /// pose, the cost after every accepted step (starting with the initial
    /// cost) and the number of linear solves.
    pub fn minimize(
        &self,
        init: &Pose2,
        loss: &RobustLoss,
        max_iterations: usize,
    ) -> Result<(Pose2, Vec<f64>, usize), RegistrationError> {
        let mut pose = *init;
        let mut cost = self.cost(&pose, loss)?;
        let mut trace = vec![cost];
        let mut lambda = LAMBDA_INIT;
        let mut eq = self.normal_equations(&pose, loss)?;
        let mut solves = 0;
        while solves < max_iterations {
            solves += 1;
            let mut damped = eq.hessian;
            for i in 0..3 {
                damped[(i, i)] += lambda * eq.hessian[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                return Err(self.degenerate());
            };
            let step = chol.solve(&(-eq.gradient));
            if !step.iter().all(|v| v.is_finite()) {
                return Err(self.degenerate());
            }
            let candidate = Pose2::new(pose.x + step.x, pose.y + step.y, pose.theta + step.z);
            let new_cost = self.cost(&candidate, loss)?;
            if new_cost < cost {
                pose = candidate;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda / LAMBDA_DOWN).max(1e-12);
                if step.norm() < 1e-12 {
                    break;
                }
                eq = self.normal_equations(&pose, loss)?;
            } else {
                lambda *= LAMBDA_UP;
                if lambda > LAMBDA_MAX || step.norm() < 1e-14 {
                    break;
                }
            }
        }
        Ok((pose, trace, solves))
    }

    fn degenerate(&self) -> RegistrationError {
        RegistrationError::Degenerate(SolveReport {
            correspondences: self.correspondences.len(),
            degenerate: true,
            ..Default::default()
        })
    }

    /// Too few correspondences, a rank-deficient system, or all target
    /// normals within [`DEGENERATE_NORMAL_SPREAD_DEG`] of one axis.
    pub fn is_degenerate(&self) -> bool {
        if self.correspondences.len() < MIN_CORRESPONDENCES {
            return true;
        }
        let mut tensor = Matrix2::zeros();
        let normals: Vec<Vector2<f64>> = self
            .correspondences
            .iter()
            .map(|c| {
                let kf = &self.keyframes[c.keyframe_index];
                kf.pose.rotation() * kf.set.points[c.target_index].normal
            })
            .collect();
        for n in &normals {
            tensor += n * n.transpose();
        }
        let eig = SymmetricEigen::new(tensor);
        let axis_idx = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
        let axis: Vector2<f64> = eig.eigenvectors.column(axis_idx).into();
        let cos_limit = DEGENERATE_NORMAL_SPREAD_DEG.to_radians().cos();
        normals.iter().all(|n| n.dot(&axis).abs() >= cos_limit)
    }
}

fn update_norm(a: &Pose2, b: &Pose2) -> f64 {
    let dth = wrap_angle(a.theta - b.theta);
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + dth * dth).sqrt()
}

/// Estimates the world pose of `current` against `keyframes`, starting from
/// `init`. Each outer iteration re-associates with the schedule's radius and
/// runs up to [`MAX_INNER_ITERATIONS`] LM steps with the schedule's loss.
pub fn solve(
    metric: ResidualMetric,
    schedule: &CoarseToFineSchedule,
    keyframes: &[Target<'_>],
    current: &SurfacePointSet,
    init: &Pose2,
) -> Result<(Pose2, SolveReport), RegistrationError> {
    let mut pose = *init;
    let mut report = SolveReport::default();
    for outer in 0..schedule.max_outer {
        let loss = schedule.loss(outer);
        let correspondences = associate(keyframes, current, &pose, schedule.radius(outer))?;
        let problem = FixedAssociation {
            metric,
            keyframes,
            current,
            correspondences: &correspondences,
        };
        report.outer_iterations = outer + 1;
        report.correspondences = correspondences.len();
        if problem.is_degenerate() {
            report.degenerate = true;
            return Err(RegistrationError::Degenerate(report));
        }
        let before = pose;
        let (next, trace, solves) = match problem.minimize(&pose, &loss, MAX_INNER_ITERATIONS) {
            Ok(v) => v,
            Err(RegistrationError::Degenerate(_)) => {
                report.degenerate = true;
                return Err(RegistrationError::Degenerate(report));
            }
            Err(e) => return Err(e),
        };
        pose = next;
        report.inner_iterations += solves;
        report.final_cost = *trace.last().unwrap_or(&0.0);
        if update_norm(&pose, &before) < UPDATE_TOLERANCE && schedule.may_terminate(outer) {
            report.converged = true;
            break;
        }
    }
    if !pose.is_finite() {
        report.degenerate = true;
        return Err(RegistrationError::Degenerate(report));
    }
    Ok((pose, report))
}
