//! Per-sweep odometry: constant-velocity prior, motion compensation,
//! registration against a fixed-size keyframe queue.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{compute_surface_points, motion_compensate, FeatureConfig, SurfacePointSet};
use crate::filtering::{k_strongest, FilterConfig};
use crate::pose::{Pose2, Twist2};
use crate::registration::{
    solve, CoarseToFineSchedule, HashGrid, RegistrationConfig, RegistrationError, ResidualMetric, SolveReport, Target,
};
use crate::scan_io::PolarScan;

pub const PRESET_NAMES: [&str; 3] = ["cfear-3", "cfear-ctf", "cfear-ctf-s10"];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (valid presets: cfear-3, cfear-ctf, cfear-ctf-s10)")]
    UnknownPreset(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum OdometryError {
    #[error("scan {scan_id} reference time {time} does not follow the previous scan ({previous})")]
    NonIncreasingTime { scan_id: u64, time: f64, previous: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdometryConfig {
    pub preset: String,
    pub filter: FilterConfig,
    pub features: FeatureConfig,
    pub registration: RegistrationConfig,
    /// Translation from the newest keyframe that triggers a new one, meters.
    pub keyframe_distance: f64,
    pub keyframe_capacity: usize,
}

impl OdometryConfig {
    /// Named parameter bundles. They differ only in the registration schedule
    /// and the keyframe queue length.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let base = |ctf: bool, capacity: usize| OdometryConfig {
            preset: name.to_string(),
            filter: FilterConfig::default(),
            features: FeatureConfig::default(),
            registration: RegistrationConfig {
                metric: ResidualMetric::PointToDistribution,
                ctf_enabled: ctf,
                ..RegistrationConfig::default()
            },
            keyframe_distance: 1.5,
            keyframe_capacity: capacity,
        };
        match name {
            "cfear-3" => Ok(base(false, 4)),
            "cfear-ctf" => Ok(base(true, 4)),
            "cfear-ctf-s10" => Ok(base(true, 10)),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.filter.validate().map_err(ConfigError::Invalid)?;
        self.features.validate().map_err(ConfigError::Invalid)?;
        self.registration.validate().map_err(ConfigError::Invalid)?;
        if !(self.keyframe_distance.is_finite() && self.keyframe_distance >= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "odom.keyframe_distance must be >= 0, got {}",
                self.keyframe_distance
            )));
        }
        if self.keyframe_capacity == 0 {
            return Err(ConfigError::Invalid("odom.keyframe_capacity must be >= 1".into()));
        }
        Ok(())
    }

    /// Overrides one knob by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.trim().parse::<T>().map_err(|e| ConfigError::InvalidValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "preset" => *self = Self::preset(value.trim())?,
            "filter.k" => self.filter.k = parse(key, value)?,
            "filter.z_min" => self.filter.z_min = parse(key, value)?,
            "filter.r_min" => self.filter.r_min = parse(key, value)?,
            "features.resolution" => self.features.resolution = parse(key, value)?,
            "features.n_min" => self.features.n_min = parse(key, value)?,
            "reg.metric" => self.registration.metric = parse(key, value)?,
            "reg.huber_delta" => self.registration.huber_delta = parse(key, value)?,
            "reg.cauchy_scale" => self.registration.cauchy_scale = parse(key, value)?,
            "reg.ctf_enabled" => self.registration.ctf_enabled = parse(key, value)?,
            "reg.max_outer" => self.registration.max_outer = parse(key, value)?,
            "reg.radius_coarse" => self.registration.radius_coarse = parse(key, value)?,
            "reg.radius_fine" => self.registration.radius_fine = parse(key, value)?,
            "odom.keyframe_distance" => self.keyframe_distance = parse(key, value)?,
            "odom.keyframe_capacity" => self.keyframe_capacity = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses `key=value` lines. A `preset` line, wherever it appears, is
    /// applied before the other keys. Defaults to `cfear-ctf-s10`.
    pub fn from_kv_text(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let preset = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map_or("cfear-ctf-s10", |(_, v)| v.as_str());
        let mut cfg = Self::preset(preset)?;
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        let r = &self.registration;
        let mut s = String::new();
        let _ = writeln!(s, "preset={}", self.preset);
        let _ = writeln!(s, "filter.k={}", self.filter.k);
        let _ = writeln!(s, "filter.z_min={}", self.filter.z_min);
        let _ = writeln!(s, "filter.r_min={}", self.filter.r_min);
        let _ = writeln!(s, "features.resolution={}", self.features.resolution);
        let _ = writeln!(s, "features.n_min={}", self.features.n_min);
        let _ = writeln!(s, "reg.metric={}", r.metric);
        let _ = writeln!(s, "reg.huber_delta={}", r.huber_delta);
        let _ = writeln!(s, "reg.cauchy_scale={}", r.cauchy_scale);
        let _ = writeln!(s, "reg.ctf_enabled={}", r.ctf_enabled);
        let _ = writeln!(s, "reg.max_outer={}", r.max_outer);
        let _ = writeln!(s, "reg.radius_coarse={}", r.radius_coarse);
        let _ = writeln!(s, "reg.radius_fine={}", r.radius_fine);
        let _ = writeln!(s, "odom.keyframe_distance={}", self.keyframe_distance);
        let _ = writeln!(s, "odom.keyframe_capacity={}", self.keyframe_capacity);
        s
    }
}

/// Predicts the next pose by repeating the last relative motion, scaled to
/// the new time step.
pub fn constant_velocity_prior(prev: &Pose2, prev_prev: &Pose2, dt_prev: f64, dt_now: f64) -> Pose2 {
    debug_assert!(dt_prev > 0.0);
    let twist = prev_prev.between(prev).log().scale(1.0 / dt_prev);
    prev.compose(&Pose2::exp(&twist.scale(dt_now)))
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub pose: Pose2,
    pub set: SurfacePointSet,
    pub grid: HashGrid,
    pub scan_id: u64,
}

impl Keyframe {
    pub fn new(pose: Pose2, mut set: SurfacePointSet, cell_size: f64, scan_id: u64) -> Self {
        set.frame_pose = pose;
        let grid = HashGrid::build(&set, cell_size);
        Self {
            pose,
            set,
            grid,
            scan_id,
        }
    }

    pub fn as_target(&self) -> Target<'_> {
        Target {
            pose: self.pose,
            set: &self.set,
            grid: &self.grid,
        }
    }
}

/// Fixed-capacity keyframe history, newest first. Pushing onto a full queue
/// evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct KeyframeQueue {
    capacity: usize,
    entries: VecDeque<Keyframe>,
}

impl KeyframeQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "keyframe capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn newest(&self) -> Option<&Keyframe> {
        self.entries.front()
    }

    /// Newest first.
    pub fn iter(&self) -> impl Iterator<Item = &Keyframe> {
        self.entries.iter()
    }

    /// Returns the evicted keyframe, if any.
    pub fn push(&mut self, keyframe: Keyframe) -> Option<Keyframe> {
        self.entries.push_front(keyframe);
        if self.entries.len() > self.capacity {
            self.entries.pop_back()
        } else {
            None
        }
    }
}

/// Wall-clock seconds spent in each stage of one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub filter: f64,
    pub features: f64,
    pub registration: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryUpdate {
    pub scan_id: u64,
    /// Reference (middle-azimuth) time of the sweep.
    pub time: f64,
    pub pose: Pose2,
    pub prior: Pose2,
    /// Registration failed and `pose` is the prior prediction.
    pub degenerate: bool,
    pub keyframe_created: bool,
    pub filtered_points: usize,
    pub surface_points: usize,
    pub report: Option<SolveReport>,
    pub timing: StageTiming,
}

#[derive(Debug, Clone, Copy)]
struct Stamped {
    time: f64,
    pose: Pose2,
}

/// One odometry pipeline instance. State only ever holds past sweeps.
#[derive(Debug, Clone)]
pub struct Odometry {
    config: OdometryConfig,
    schedule: CoarseToFineSchedule,
    keyframes: KeyframeQueue,
    last: Option<Stamped>,
    before_last: Option<Stamped>,
}

impl Odometry {
    pub fn new(config: OdometryConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            schedule: config.registration.schedule(),
            keyframes: KeyframeQueue::new(config.keyframe_capacity),
            config,
            last: None,
            before_last: None,
        })
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.config
    }

    pub fn keyframes(&self) -> &KeyframeQueue {
        &self.keyframes
    }

    /// Body twist over the last solved interval; zero until two sweeps exist.
    fn last_twist(&self) -> Twist2 {
        match (self.last, self.before_last) {
            (Some(l), Some(p)) if l.time > p.time => p.pose.between(&l.pose).log().scale(1.0 / (l.time - p.time)),
            _ => Twist2::ZERO,
        }
    }

    fn prior(&self, time: f64) -> Pose2 {
        match (self.last, self.before_last) {
            (None, _) => Pose2::IDENTITY,
            (Some(l), None) => l.pose,
            (Some(l), Some(p)) => constant_velocity_prior(&l.pose, &p.pose, l.time - p.time, time - l.time),
        }
    }

    pub fn process_scan(&mut self, scan: &PolarScan) -> Result<OdometryUpdate, OdometryError> {
        let time = scan.reference_time();
        if let Some(l) = self.last {
            if time <= l.time {
                return Err(OdometryError::NonIncreasingTime {
                    scan_id: scan.scan_id(),
                    time,
                    previous: l.time,
                });
            }
        }
        let start = Instant::now();
        let filtered = k_strongest(scan, &self.config.filter);
        let after_filter = Instant::now();

        let compensated = motion_compensate(&filtered, &self.last_twist(), time);
        let set = compute_surface_points(
            &compensated,
            self.config.features.resolution,
            self.config.features.n_min,
        );
        let after_features = Instant::now();

        let prior = self.prior(time);
        let (pose, report, degenerate) = if self.keyframes.is_empty() {
            (prior, None, false)
        } else {
            let targets: Vec<Target<'_>> = self.keyframes.iter().map(Keyframe::as_target).collect();
            match solve(self.config.registration.metric, &self.schedule, &targets, &set, &prior) {
                Ok((pose, report)) => (pose, Some(report), false),
                Err(RegistrationError::Degenerate(report)) => {
                    warn!(
                        "scan {}: degenerate registration ({} correspondences), using prior",
                        scan.scan_id(),
                        report.correspondences
                    );
                    (prior, Some(report), true)
                }
                Err(e) => {
                    warn!("scan {}: registration failed ({e}), using prior", scan.scan_id());
                    (prior, None, true)
                }
            }
        };
        let after_registration = Instant::now();

        let starving = self
            .keyframes
            .iter()
            .all(|k| k.set.len() < crate::registration::MIN_CORRESPONDENCES);
        let far_enough = self
            .keyframes
            .newest()
            .is_none_or(|k| k.pose.distance_to(&pose) >= self.config.keyframe_distance);
        let keyframe_created = far_enough && (!degenerate || starving);
        let surface_points = set.len();
        if keyframe_created {
            self.keyframes
                .push(Keyframe::new(pose, set, self.schedule.cell_size(), scan.scan_id()));
        }

        self.before_last = self.last;
        self.last = Some(Stamped { time, pose });

        Ok(OdometryUpdate {
            scan_id: scan.scan_id(),
            time,
            pose,
            prior,
            degenerate,
            keyframe_created,
            filtered_points: filtered.len(),
            surface_points,
            report,
            timing: StageTiming {
                filter: (after_filter - start).as_secs_f64(),
                features: (after_features - after_filter).as_secs_f64(),
                registration: (after_registration - after_features).as_secs_f64(),
                total: (after_registration - start).as_secs_f64(),
            },
        })
    }
}
