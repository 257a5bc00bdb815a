//! Drift over 100–800 m subsequences, and trajectory files.
//!
//! For every start frame and every segment length, the relative pose between
//! the start and the first frame at least that far along the ground-truth
//! path is compared between estimate and ground truth. Translation error is
//! reported in percent of segment length, rotation error in degrees per
//! 100 m.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::Pose2;

pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
/// Maximum timestamp difference for associating estimate and ground truth.
pub const TIME_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground-truth segment of at least 100 m")]
    TooShort,
    #[error("no estimate pose lies within {TIME_TOLERANCE} s of a ground-truth pose")]
    NoTimeOverlap,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StampedPose {
    pub time: f64,
    pub pose: Pose2,
}

/// Poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<StampedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<StampedPose>) -> Result<Self, EvalError> {
        if let Some(i) = (1..poses.len()).find(|&i| poses[i].time <= poses[i - 1].time) {
            return Err(EvalError::Parse {
                line: i + 1,
                message: format!(
                    "timestamp {} does not increase past {}",
                    poses[i].time,
                    poses[i - 1].time
                ),
            });
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[StampedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Appends a pose; `time` must exceed the last timestamp.
    pub fn push(&mut self, time: f64, pose: Pose2) -> Result<(), EvalError> {
        if let Some(last) = self.poses.last() {
            if time <= last.time {
                return Err(EvalError::Parse {
                    line: self.poses.len() + 1,
                    message: format!("timestamp {time} does not increase past {}", last.time),
                });
            }
        }
        self.poses.push(StampedPose { time, pose });
        Ok(())
    }

    /// Left-composes every pose with `t`.
    pub fn left_composed(&self, t: &Pose2) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .map(|p| StampedPose {
                    time: p.time,
                    pose: t.compose(&p.pose),
                })
                .collect(),
        }
    }

    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].pose.distance_to(&w[1].pose)).sum()
    }

    /// Index of the pose nearest in time to `t`.
    fn nearest(&self, t: f64) -> Option<usize> {
        if self.poses.is_empty() {
            return None;
        }
        let i = self.poses.partition_point(|p| p.time < t);
        let candidates = [i.checked_sub(1), (i < self.poses.len()).then_some(i)];
        candidates.into_iter().flatten().min_by(|&a, &b| {
            (self.poses[a].time - t)
                .abs()
                .total_cmp(&(self.poses[b].time - t).abs())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDrift {
    pub length: f64,
    pub segments: usize,
    pub translation_error_percent: f64,
    pub rotation_error_deg_per_100m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Mean over all segments of every length.
    pub translation_error_percent: f64,
    pub rotation_error_deg_per_100m: f64,
    pub segment_count: usize,
    pub per_length: Vec<LengthDrift>,
    pub matched_poses: usize,
    /// Estimate poses without a ground-truth pose within the time tolerance.
    pub unmatched_poses: usize,
}

impl fmt::Display for DriftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:.2}/{:.2})",
            self.translation_error_percent, self.rotation_error_deg_per_100m
        )
    }
}

/// Drift of `estimate` against `ground_truth`, pooling all segments.
pub fn evaluate_drift(estimate: &Trajectory, ground_truth: &Trajectory) -> Result<DriftReport, EvalError> {
    let mut est = Vec::new();
    let mut gt: Vec<Pose2> = Vec::new();
    let mut unmatched = 0;
    for p in estimate.poses() {
        match ground_truth.nearest(p.time) {
            Some(j) if (ground_truth.poses()[j].time - p.time).abs() <= TIME_TOLERANCE => {
                est.push(p.pose);
                gt.push(ground_truth.poses()[j].pose);
            }
            _ => unmatched += 1,
        }
    }
    if est.is_empty() {
        return Err(EvalError::NoTimeOverlap);
    }

    let mut dist = Vec::with_capacity(gt.len());
    let mut acc = 0.0;
    dist.push(0.0);
    for w in gt.windows(2) {
        acc += w[0].distance_to(&w[1]);
        dist.push(acc);
    }

    let mut per_length = Vec::new();
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for &length in &SEGMENT_LENGTHS {
        let (mut lt, mut lr, mut ln) = (0.0, 0.0, 0usize);
        let mut end = 0;
        for start in 0..gt.len() {
            // first frame at least `length` meters further along the path
            end = end.max(start);
            while end < gt.len() && dist[end] < dist[start] + length {
                end += 1;
            }
            if end == gt.len() {
                break;
            }
            let gt_rel = gt[start].between(&gt[end]);
            let est_rel = est[start].between(&est[end]);
            let err = gt_rel.between(&est_rel);
            lt += err.translation().norm() / length;
            lr += err.theta.abs() / length;
            ln += 1;
        }
        if ln > 0 {
            per_length.push(LengthDrift {
                length,
                segments: ln,
                translation_error_percent: 100.0 * lt / ln as f64,
                rotation_error_deg_per_100m: 100.0 * lr.to_degrees() / ln as f64,
            });
            t_sum += lt;
            r_sum += lr;
            count += ln;
        }
    }
    if count == 0 {
        return Err(EvalError::TooShort);
    }
    Ok(DriftReport {
        translation_error_percent: 100.0 * t_sum / count as f64,
        rotation_error_deg_per_100m: 100.0 * r_sum.to_degrees() / count as f64,
        segment_count: count,
        per_length,
        matched_poses: est.len(),
        unmatched_poses: unmatched,
    })
}

/// `timestamp x y theta` per line.
pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = String::new();
    for p in traj.poses() {
        let _ = writeln!(s, "{} {} {} {}", p.time, p.pose.x, p.pose.y, p.pose.theta);
    }
    s
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, EvalError> {
    let mut traj = Trajectory::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<_, _>>()
            .map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        let [t, x, y, theta] = fields[..] else {
            return Err(EvalError::Parse {
                line: i + 1,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        };
        if !fields.iter().all(|v| v.is_finite()) {
            return Err(EvalError::Parse {
                line: i + 1,
                message: "non-finite value".into(),
            });
        }
        traj.push(t, Pose2::new(x, y, theta)).map_err(|e| match e {
            EvalError::Parse { message, .. } => EvalError::Parse { line: i + 1, message },
            other => other,
        })?;
    }
    Ok(traj)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), EvalError> {
    fs::write(path, format_trajectory(traj)).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trajectory(&text)
}

/// Flattened row-major 3×4 SE(3) matrices with z = 0, one per line, as read
/// by common odometry evaluators.
pub fn format_kitti(traj: &Trajectory) -> String {
    let mut s = String::new();
    for p in traj.poses() {
        let (sn, c) = p.pose.theta.sin_cos();
        let _ = writeln!(s, "{} {} 0 {} {} {} 0 {} 0 0 1 0", c, -sn, p.pose.x, sn, c, p.pose.y);
    }
    s
}
