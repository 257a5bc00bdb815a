//! Synthetic polar sweeps from a 2D reflector world along a known motion.
//!
//! Each azimuth is fired at its own timestamp from the pose at that instant,
//! so moving sweeps carry the same distortion a spinning sensor produces.
//! Returns are Gaussian in range (σ = 1.5 bins), scaled by reflectivity,
//! a 1/r falloff and, for walls, the incidence angle. A seeded noise floor is
//! added and intensities are quantized to 8 bits.

mod scenarios;

pub use scenarios::{mixed, scenario, Scenario, WorldKind, SCENARIO_NAMES};

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{StampedPose, Trajectory};
use crate::pose::{Pose2, Twist2};
use crate::scan_io::{synthesize_azimuth_times, PolarScan};

/// Range response width in bins.
pub const RANGE_SIGMA_BINS: f64 = 1.5;
/// Range below which returns are not attenuated, meters.
pub const FALLOFF_REFERENCE: f64 = 25.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown scenario `{0}` (valid scenarios: {names})", names = SCENARIO_NAMES.join(", "))]
    UnknownScenario(String),
    #[error("unknown simulation key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointReflector {
    pub position: Vector2<f64>,
    pub reflectivity: f64,
}

/// Walls and point reflectors in world coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    pub segments: Vec<Segment>,
    pub points: Vec<PointReflector>,
}

fn valid_reflectivity(r: f64) -> bool {
    r > 0.0 && r <= 1.0
}

impl World {
    /// Checks reflectivities and that the world is not empty.
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.segments.is_empty() && self.points.is_empty() {
            return Err(SynthError::Invalid("world has no reflectors".into()));
        }
        let refl = self
            .segments
            .iter()
            .map(|s| s.reflectivity)
            .chain(self.points.iter().map(|p| p.reflectivity));
        for r in refl {
            if !valid_reflectivity(r) {
                return Err(SynthError::Invalid(format!("reflectivity {r} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(min, max)`, `None` when empty.
    pub fn bounds(&self) -> Option<(Vector2<f64>, Vector2<f64>)> {
        let mut it = self
            .segments
            .iter()
            .flat_map(|s| [s.a, s.b])
            .chain(self.points.iter().map(|p| p.position));
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p))))
    }

    pub fn add_polygon(&mut self, corners: &[Vector2<f64>], reflectivity: f64) {
        for i in 0..corners.len() {
            self.segments.push(Segment {
                a: corners[i],
                b: corners[(i + 1) % corners.len()],
                reflectivity,
            });
        }
    }

    /// Parses `seg x1 y1 x2 y2 refl` and `pt x y refl` lines. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<World, SynthError> {
        let mut world = World::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SynthError::Parse { line: i + 1, message };
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap_or_default();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("`{f}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if nums.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite value".into()));
            }
            let refl = *nums.last().unwrap_or(&0.0);
            match (kind, nums.len()) {
                ("seg", 5) => world.segments.push(Segment {
                    a: Vector2::new(nums[0], nums[1]),
                    b: Vector2::new(nums[2], nums[3]),
                    reflectivity: refl,
                }),
                ("pt", 3) => world.points.push(PointReflector {
                    position: Vector2::new(nums[0], nums[1]),
                    reflectivity: refl,
                }),
                ("seg", n) | ("pt", n) => return Err(err(format!("`{kind}` with {n} numbers"))),
                _ => return Err(err(format!("unknown entry `{kind}`"))),
            }
            if !valid_reflectivity(refl) {
                return Err(err(format!("reflectivity {refl} outside (0, 1]")));
            }
        }
        world.validate()?;
        Ok(world)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.segments {
            let _ = writeln!(s, "seg {} {} {} {} {}", g.a.x, g.a.y, g.b.x, g.b.y, g.reflectivity);
        }
        for p in &self.points {
            let _ = writeln!(s, "pt {} {} {}", p.position.x, p.position.y, p.reflectivity);
        }
        s
    }

    pub fn load(path: &Path) -> Result<World, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        World::parse(&text)
    }
}

/// Sensor and noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_azimuths: usize,
    pub n_bins: usize,
    pub range_resolution: f64,
    pub range_offset: f64,
    pub sweep_duration: f64,
    /// Standard deviation of the additive noise, intensity units.
    pub noise_floor: f64,
    /// Full width of the point-reflector beam pattern, radians.
    pub beam_width: f64,
    pub seed: u64,
    /// Fraction of reflectors in each sweep that are transient clutter.
    pub clutter_ratio: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_azimuths: 400,
            n_bins: 3000,
            range_resolution: 0.05,
            range_offset: 0.0,
            sweep_duration: 0.25,
            noise_floor: 0.02,
            beam_width: 2f64.to_radians(),
            seed: 0,
            clutter_ratio: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_azimuths == 0 || self.n_bins == 0 {
            return bad("sim.n_azimuths and sim.n_bins must be >= 1".into());
        }
        for (name, v) in [
            ("sim.range_resolution", self.range_resolution),
            ("sim.sweep_duration", self.sweep_duration),
            ("sim.beam_width", self.beam_width),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.noise_floor.is_finite() && self.noise_floor >= 0.0) {
            return bad(format!("sim.noise_floor must be >= 0, got {}", self.noise_floor));
        }
        if !(self.range_offset.is_finite() && self.range_offset >= 0.0) {
            return bad(format!("sim.range_offset must be >= 0, got {}", self.range_offset));
        }
        if !(0.0..1.0).contains(&self.clutter_ratio) {
            return bad(format!(
                "sim.clutter_ratio must be in [0, 1), got {}",
                self.clutter_ratio
            ));
        }
        if self.sweep_duration >= crate::scan_io::MAX_SWEEP_SECONDS {
            return bad(format!(
                "sim.sweep_duration must be < 0.5 s, got {}",
                self.sweep_duration
            ));
        }
        Ok(())
    }

    /// Overrides one knob by its `sim.*` key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SynthError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .trim()
                .parse::<T>()
                .map_err(|e| SynthError::Invalid(format!("invalid value `{value}` for `{key}`: {e}")))
        }
        match key {
            "sim.n_azimuths" => self.n_azimuths = parse(key, value)?,
            "sim.n_bins" => self.n_bins = parse(key, value)?,
            "sim.range_resolution" => self.range_resolution = parse(key, value)?,
            "sim.range_offset" => self.range_offset = parse(key, value)?,
            "sim.sweep_duration" => self.sweep_duration = parse(key, value)?,
            "sim.noise_floor" => self.noise_floor = parse(key, value)?,
            "sim.beam_width" => self.beam_width = parse::<f64>(key, value)?.to_radians(),
            "sim.clutter_ratio" => self.clutter_ratio = parse(key, value)?,
            _ => return Err(SynthError::UnknownKey(key.to_string())),
        }
        self.validate()
    }

    pub fn max_range(&self) -> f64 {
        self.range_offset + self.n_bins as f64 * self.range_resolution
    }
}

/// One piece of a [`MotionProfile`]: constant yaw rate with speed ramping
/// linearly from `v0` to `v1`. Speed changes are only allowed while driving
/// straight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub duration: f64,
    pub v0: f64,
    pub v1: f64,
    pub omega: f64,
}

impl MotionSegment {
    fn displacement(&self, tau: f64) -> Pose2 {
        if self.omega == 0.0 {
            let s = self.v0 * tau + 0.5 * (self.v1 - self.v0) / self.duration * tau * tau;
            Pose2::new(s, 0.0, 0.0)
        } else {
            Pose2::exp(&Twist2::new(self.v0 * tau, 0.0, self.omega * tau))
        }
    }

    fn length(&self) -> f64 {
        0.5 * (self.v0 + self.v1) * self.duration
    }
}

/// Piecewise closed-form platform motion. Before time 0 and after the last
/// segment the platform stands still.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    segments: Vec<MotionSegment>,
    /// Start time and pose of every segment.
    knots: Vec<(f64, Pose2)>,
    end: Pose2,
}

impl MotionProfile {
    pub fn new(start: Pose2, segments: Vec<MotionSegment>) -> Result<Self, SynthError> {
        let mut knots = Vec::with_capacity(segments.len());
        let (mut t, mut pose) = (0.0, start);
        for s in &segments {
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return Err(SynthError::Invalid(format!(
                    "segment duration {} must be > 0",
                    s.duration
                )));
            }
            if s.omega != 0.0 && s.v0 != s.v1 {
                return Err(SynthError::Invalid("speed may only change on straight segments".into()));
            }
            if s.v0 < 0.0 || s.v1 < 0.0 || !s.omega.is_finite() {
                return Err(SynthError::Invalid("speeds must be >= 0 and yaw rates finite".into()));
            }
            knots.push((t, pose));
            pose = pose.compose(&s.displacement(s.duration));
            t += s.duration;
        }
        Ok(Self {
            segments,
            knots,
            end: pose,
        })
    }

    pub fn builder(start: Pose2) -> MotionBuilder {
        MotionBuilder {
            start,
            speed: 0.0,
            segments: Vec::new(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(MotionSegment::length).sum()
    }

    pub fn start(&self) -> Pose2 {
        self.knots.first().map_or(self.end, |k| k.1)
    }

    pub fn end(&self) -> Pose2 {
        self.end
    }

    pub fn pose(&self, t: f64) -> Pose2 {
        if self.knots.is_empty() || t <= 0.0 {
            return self.start();
        }
        let i = self.knots.partition_point(|k| k.0 <= t) - 1;
        let (t0, p0) = self.knots[i];
        let seg = &self.segments[i];
        let tau = t - t0;
        if tau >= seg.duration {
            return self.end;
        }
        p0.compose(&seg.displacement(tau))
    }

    /// Poses every `step` meters of travel, for placing scenery.
    pub fn sample_path(&self, step: f64) -> Vec<Pose2> {
        let mut out = vec![self.start()];
        let mut t = 0.0;
        let total = self.duration();
        while t < total {
            let i = self.knots.partition_point(|k| k.0 <= t) - 1;
            let v = self.segments[i].v0.max(self.segments[i].v1).max(0.5);
            t = (t + step / v).min(total);
            out.push(self.pose(t));
        }
        out
    }
}

/// Assembles a [`MotionProfile`] from driving primitives.
#[derive(Debug, Clone)]
pub struct MotionBuilder {
    start: Pose2,
    speed: f64,
    segments: Vec<MotionSegment>,
}

impl MotionBuilder {
    pub fn hold(mut self, seconds: f64) -> Self {
        self.segments.push(MotionSegment {
            duration: seconds,
            v0: 0.0,
            v1: 0.0,
            omega: 0.0,
        });
        self.speed = 0.0;
        self
    }

    /// Straight line while changing speed linearly.
    pub fn ramp(mut self, speed: f64, seconds: f64) -> Self {
        self.segments.push(MotionSegment {
            duration: seconds,
            v0: self.speed,
            v1: speed,
            omega: 0.0,
        });
        self.speed = speed;
        self
    }

    pub fn straight(mut self, meters: f64) -> Self {
        assert!(self.speed > 0.0, "straight() needs a nonzero speed");
        self.segments.push(MotionSegment {
            duration: meters / self.speed,
            v0: self.speed,
            v1: self.speed,
            omega: 0.0,
        });
        self
    }

    /// Circular arc; positive angles turn left.
    pub fn arc(mut self, radius: f64, angle: f64) -> Self {
        assert!(
            self.speed > 0.0 && radius > 0.0,
            "arc() needs a nonzero speed and radius"
        );
        self.segments.push(MotionSegment {
            duration: angle.abs() * radius / self.speed,
            v0: self.speed,
            v1: self.speed,
            omega: angle.signum() * self.speed / radius,
        });
        self
    }

    pub fn build(self) -> MotionProfile {
        MotionProfile::new(self.start, self.segments).expect("builder produces valid segments")
    }
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Range to the nearest wall along a ray and the cosine of the incidence
/// angle there.
fn cast(segments: &[Segment], origin: &Vector2<f64>, dir: &Vector2<f64>) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for s in segments {
        let e = s.b - s.a;
        let den = cross(dir, &e);
        if den.abs() < 1e-12 {
            continue;
        }
        let w = s.a - origin;
        let range = cross(&w, &e) / den;
        let u = cross(&w, dir) / den;
        if range > 1e-6 && (0.0..=1.0).contains(&u) && best.is_none_or(|b| range < b.0) {
            let cos_inc = den.abs() / e.norm();
            best = Some((range, cos_inc, s.reflectivity));
        }
    }
    best
}

fn deposit(row: &mut [f64], amplitude: f64, range: f64, cfg: &SimConfig) {
    let f = (range - cfg.range_offset) / cfg.range_resolution - 0.5;
    let half = (4.0 * RANGE_SIGMA_BINS).ceil() as i64;
    let center = f.round() as i64;
    let inv = 1.0 / (2.0 * RANGE_SIGMA_BINS * RANGE_SIGMA_BINS);
    for b in (center - half).max(0)..=(center + half).min(row.len() as i64 - 1) {
        let d = b as f64 - f;
        row[b as usize] += amplitude * (-d * d * inv).exp();
    }
}

fn falloff(range: f64) -> f64 {
    (FALLOFF_REFERENCE / range).min(1.0)
}

/// Reflectors within reach of the sweep plus transient clutter.
fn visible_scene(
    world: &World,
    motion: &dyn Fn(f64) -> Pose2,
    t0: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<Segment>, Vec<PointReflector>) {
    let p0 = motion(t0);
    let p1 = motion(t0 + cfg.sweep_duration);
    let reach = cfg.max_range() + p0.distance_to(&p1) + 1.0;
    let c = p0.translation();
    let segments: Vec<Segment> = world
        .segments
        .iter()
        .filter(|s| {
            let e = s.b - s.a;
            let u = ((c - s.a).dot(&e) / e.norm_squared().max(1e-12)).clamp(0.0, 1.0);
            (s.a + e * u - c).norm() <= reach
        })
        .copied()
        .collect();
    let mut points: Vec<PointReflector> = world
        .points
        .iter()
        .filter(|p| (p.position - c).norm() <= reach)
        .copied()
        .collect();
    if cfg.clutter_ratio > 0.0 {
        // one clutter reflector per 3 m of wall or point reflector in range
        let static_count = points.len() as f64 + segments.iter().map(|s| (s.b - s.a).norm() / 3.0).sum::<f64>();
        let n = (cfg.clutter_ratio / (1.0 - cfg.clutter_ratio) * static_count).round() as usize;
        let r_max = 0.6 * cfg.max_range();
        for _ in 0..n {
            let r = rng.random_range(5.0..r_max.max(5.5));
            let phi = rng.random_range(0.0..TAU);
            points.push(PointReflector {
                position: c + Vector2::new(r * phi.cos(), r * phi.sin()),
                reflectivity: rng.random_range(0.5..1.0),
            });
        }
    }
    (segments, points)
}

/// Simulates one sweep starting at `t0`. The RNG stream is chosen by
/// `scan_id`, so sweeps can be generated independently and in any order.
pub fn simulate_sweep(
    world: &World,
    motion: &dyn Fn(f64) -> Pose2,
    t0: f64,
    cfg: &SimConfig,
    scan_id: u64,
) -> PolarScan {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(scan_id);
    let (segments, points) = visible_scene(world, motion, t0, cfg, &mut rng);

    let n_az = cfg.n_azimuths;
    let n_bins = cfg.n_bins;
    let angles: Vec<f64> = (0..n_az).map(|a| TAU * a as f64 / n_az as f64).collect();
    let times = synthesize_azimuth_times(t0, cfg.sweep_duration, n_az);
    let sigma_beam = 0.5 * cfg.beam_width;
    let beam_cut = 3.0 * sigma_beam;
    let max_range = cfg.max_range();

    let noise = Normal::new(0.0, cfg.noise_floor.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut row = vec![0.0f64; n_bins];
    let mut out = Vec::with_capacity(n_az * n_bins);
    for a in 0..n_az {
        row.fill(0.0);
        let pose = motion(times[a]);
        let heading = pose.theta + angles[a];
        let dir = Vector2::new(heading.cos(), heading.sin());
        let origin = pose.translation();
        let wall = cast(&segments, &origin, &dir);
        let occluder = wall.map_or(f64::INFINITY, |w| w.0);
        if let Some((range, cos_inc, refl)) = wall {
            if range < max_range {
                deposit(&mut row, refl * falloff(range) * (0.4 + 0.6 * cos_inc), range, cfg);
            }
        }
        for p in &points {
            let v = p.position - origin;
            let along = v.dot(&dir);
            if along <= 0.0 || along >= occluder.min(max_range) {
                continue;
            }
            let off = cross(&dir, &v).atan2(along);
            if off.abs() > beam_cut {
                continue;
            }
            let range = v.norm();
            let gain = (-0.5 * (off / sigma_beam).powi(2)).exp();
            deposit(&mut row, p.reflectivity * falloff(range) * gain, range, cfg);
        }
        for v in row.iter_mut() {
            if cfg.noise_floor > 0.0 {
                *v += noise.sample(&mut rng);
            }
            out.push(((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32);
        }
    }
    PolarScan::new(
        out,
        n_bins,
        angles,
        times,
        cfg.range_resolution,
        cfg.range_offset,
        scan_id,
    )
    .expect("simulated sweeps satisfy the scan invariants")
}

/// Lazily simulated sweeps at a fixed frame rate. Frame `i` starts at
/// `i / frame_rate` and is paired with the ground-truth pose at its reference
/// (middle-azimuth) time.
#[derive(Clone)]
pub struct SequenceGenerator<'a> {
    world: &'a World,
    motion: &'a MotionProfile,
    cfg: SimConfig,
    frame_rate: f64,
    frames: usize,
    next: usize,
}

impl<'a> SequenceGenerator<'a> {
    pub fn new(world: &'a World, motion: &'a MotionProfile, cfg: SimConfig, frame_rate: f64, frames: usize) -> Self {
        assert!(frame_rate > 0.0, "frame rate must be positive");
        Self {
            world,
            motion,
            cfg,
            frame_rate,
            frames,
            next: 0,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame(&self, i: usize) -> (PolarScan, StampedPose) {
        let t0 = i as f64 / self.frame_rate;
        let motion = |t: f64| self.motion.pose(t);
        let scan = simulate_sweep(self.world, &motion, t0, &self.cfg, i as u64);
        let time = scan.reference_time();
        let pose = self.motion.pose(time);
        (scan, StampedPose { time, pose })
    }

    /// Ground truth without simulating the sweeps.
    pub fn ground_truth(&self) -> Trajectory {
        let poses = (0..self.frames)
            .map(|i| {
                let t0 = i as f64 / self.frame_rate;
                let times = synthesize_azimuth_times(t0, self.cfg.sweep_duration, self.cfg.n_azimuths);
                let time = times[self.cfg.n_azimuths / 2];
                StampedPose {
                    time,
                    pose: self.motion.pose(time),
                }
            })
            .collect();
        Trajectory::new(poses).expect("frame times increase")
    }
}

impl Iterator for SequenceGenerator<'_> {
    type Item = (PolarScan, StampedPose);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.frames {
            return None;
        }
        let item = self.frame(self.next);
        self.next += 1;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.frames - self.next;
        (n, Some(n))
    }
}

/// Simulates a whole sequence in memory. A 400×3000 sweep takes about 5 MB,
/// so long sequences should iterate a [`SequenceGenerator`] instead.
pub fn generate_sequence(
    world: &World,
    motion: &MotionProfile,
    cfg: &SimConfig,
    frame_rate: f64,
    frames: usize,
) -> (Vec<PolarScan>, Trajectory) {
    let gen = SequenceGenerator::new(world, motion, *cfg, frame_rate, frames);
    let gt = gen.ground_truth();
    (gen.map(|(scan, _)| scan).collect(), gt)
}
