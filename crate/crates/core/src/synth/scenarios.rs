//! Named, seeded scenarios: a world, a motion profile and a sensor model.
//!
//! Long scenarios get procedurally generated scenery along their path; the
//! seed drives the path, the scenery and the sensor noise.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MotionProfile, PointReflector, SequenceGenerator, SimConfig, SynthError, World};
use crate::evaluation::Trajectory;
use crate::pose::Pose2;

pub const SCENARIO_NAMES: [&str; 8] = [
    "straight500",
    "loop400",
    "mixed800",
    "mixed800-forest",
    "mixed800-industrial",
    "turn90",
    "turn90-clutter",
    "courtyard",
];

const COURTYARD: &str = include_str!("../../scenarios/courtyard.world");

/// Sweeps per second; sweeps are back to back.
const FRAME_RATE: f64 = 4.0;
const CRUISE_SPEED: f64 = 10.0;
/// Scenery keeps at least this far from the driven path.
const CLEARANCE: f64 = 4.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldKind {
    /// Building blocks, lamp posts and parked cars.
    Urban,
    /// Trees and boulders.
    Forest,
    /// Warehouses, container rows and fences.
    Industrial,
}

impl WorldKind {
    pub const ALL: [WorldKind; 3] = [WorldKind::Urban, WorldKind::Forest, WorldKind::Industrial];

    fn salt(self) -> u64 {
        match self {
            WorldKind::Urban => 0x75726261,
            WorldKind::Forest => 0x666f7265,
            WorldKind::Industrial => 0x696e6475,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub world: World,
    pub motion: MotionProfile,
    pub sim: SimConfig,
    pub frame_rate: f64,
    pub frames: usize,
}

impl Scenario {
    fn new(name: &str, world: World, motion: MotionProfile, sim: SimConfig) -> Self {
        let frames = ((motion.duration() + 1.0) * FRAME_RATE).floor() as usize;
        Self {
            name: name.to_string(),
            world,
            motion,
            sim,
            frame_rate: FRAME_RATE,
            frames,
        }
    }

    pub fn generator(&self) -> SequenceGenerator<'_> {
        SequenceGenerator::new(&self.world, &self.motion, self.sim, self.frame_rate, self.frames)
    }

    pub fn ground_truth(&self) -> Trajectory {
        self.generator().ground_truth()
    }
}

/// Looks up a named scenario.
pub fn scenario(name: &str, seed: u64) -> Result<Scenario, SynthError> {
    let sim = SimConfig {
        seed,
        ..SimConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = match name {
        "straight500" => {
            let motion = MotionProfile::builder(Pose2::IDENTITY)
                .hold(1.0)
                .ramp(CRUISE_SPEED, 2.0)
                .straight(490.0)
                .ramp(0.0, 2.0)
                .hold(1.0)
                .build();
            let world = populate(WorldKind::Urban, &motion, seed);
            Scenario::new(name, world, motion, sim)
        }
        "loop400" => {
            // four sides and four quarter arcs, starting and ending at rest
            // in the middle of the first side
            let radius = 12.0;
            let side = (400.0 - 2.0 * PI * radius) / 4.0;
            let half = side / 2.0 - 10.0;
            let mut b = MotionProfile::builder(Pose2::IDENTITY)
                .hold(1.0)
                .ramp(CRUISE_SPEED, 2.0)
                .straight(half)
                .arc(radius, FRAC_PI_2);
            for _ in 0..3 {
                b = b.straight(side).arc(radius, FRAC_PI_2);
            }
            let motion = b.straight(half).ramp(0.0, 2.0).hold(2.0).build();
            let world = populate(WorldKind::Urban, &motion, seed);
            Scenario::new(name, world, motion, sim)
        }
        "mixed800" => mixed(WorldKind::Urban, 800.0, seed),
        "mixed800-forest" => mixed(WorldKind::Forest, 800.0, seed),
        "mixed800-industrial" => mixed(WorldKind::Industrial, 800.0, seed),
        "turn90" | "turn90-clutter" => {
            let motion = MotionProfile::builder(Pose2::IDENTITY)
                .hold(1.0)
                .ramp(8.0, 2.0)
                .straight(30.0)
                .arc(rng.random_range(6.0..14.0), FRAC_PI_2)
                .straight(30.0)
                .ramp(0.0, 2.0)
                .hold(1.0)
                .build();
            let world = populate(WorldKind::Urban, &motion, seed);
            let sim = SimConfig {
                clutter_ratio: if name == "turn90-clutter" { 0.3 } else { 0.0 },
                ..sim
            };
            Scenario::new(name, world, motion, sim)
        }
        "courtyard" => {
            let motion = MotionProfile::builder(Pose2::IDENTITY)
                .hold(1.0)
                .ramp(5.0, 2.0)
                .straight(15.0)
                .arc(5.0, FRAC_PI_2)
                .straight(10.0)
                .ramp(0.0, 2.0)
                .hold(1.0)
                .build();
            let world = World::parse(COURTYARD).expect("bundled world parses");
            let sim = SimConfig { n_bins: 1400, ..sim };
            Scenario::new(name, world, motion, sim)
        }
        other => return Err(SynthError::UnknownScenario(other.to_string())),
    };
    Ok(s)
}

/// A path of random straights and turns at least `length` meters long, with
/// scenery of the given kind.
pub fn mixed(kind: WorldKind, length: f64, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69786564);
    let mut b = MotionProfile::builder(Pose2::IDENTITY)
        .hold(1.0)
        .ramp(CRUISE_SPEED, 2.0);
    let mut driven = 10.0;
    let mut left = rng.random_bool(0.5);
    while driven < length {
        let straight = rng.random_range(30.0..90.0);
        let radius = rng.random_range(15.0..40.0);
        let angle = rng.random_range(30f64..110.0).to_radians();
        // alternate turn direction most of the time so the path meanders
        left = if rng.random_bool(0.8) { !left } else { left };
        let signed = if left { angle } else { -angle };
        b = b.straight(straight).arc(radius, signed);
        driven += straight + radius * angle;
    }
    let motion = b.straight(20.0).ramp(0.0, 2.0).hold(1.0).build();
    let world = populate(kind, &motion, seed);
    let name = match kind {
        WorldKind::Urban => format!("mixed{length}"),
        WorldKind::Forest => format!("mixed{length}-forest"),
        WorldKind::Industrial => format!("mixed{length}-industrial"),
    };
    Scenario::new(
        &name,
        world,
        motion,
        SimConfig {
            seed,
            ..SimConfig::default()
        },
    )
}

/// Path samples bucketed for clearance queries.
struct PathIndex {
    cells: HashMap<(i64, i64), Vec<Vector2<f64>>>,
}

impl PathIndex {
    fn new(samples: &[Pose2]) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<Vector2<f64>>> = HashMap::new();
        for p in samples {
            let t = p.translation();
            cells.entry(Self::cell(&t)).or_default().push(t);
        }
        Self { cells }
    }

    fn cell(p: &Vector2<f64>) -> (i64, i64) {
        ((p.x / CLEARANCE).floor() as i64, (p.y / CLEARANCE).floor() as i64)
    }

    fn clear(&self, p: &Vector2<f64>) -> bool {
        let (cx, cy) = Self::cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.cells.get(&(cx + dx, cy + dy)) {
                    if v.iter().any(|q| (q - p).norm() < CLEARANCE) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn polygon_clear(&self, corners: &[Vector2<f64>]) -> bool {
        (0..corners.len()).all(|i| {
            let a = corners[i];
            let b = corners[(i + 1) % corners.len()];
            let n = ((b - a).norm() / 1.0).ceil().max(1.0) as usize;
            (0..=n).all(|k| self.clear(&(a + (b - a) * (k as f64 / n as f64))))
        })
    }
}

/// Corners of a rectangle centered at `c`, with its first side along `heading`.
fn rectangle(c: Vector2<f64>, heading: f64, length: f64, width: f64) -> [Vector2<f64>; 4] {
    let u = Vector2::new(heading.cos(), heading.sin()) * (0.5 * length);
    let v = Vector2::new(-heading.sin(), heading.cos()) * (0.5 * width);
    [c - u - v, c + u - v, c + u + v, c - u + v]
}

fn regular_polygon(c: Vector2<f64>, radius: f64, sides: usize, phase: f64) -> Vec<Vector2<f64>> {
    (0..sides)
        .map(|i| {
            let a = phase + 2.0 * PI * i as f64 / sides as f64;
            c + Vector2::new(a.cos(), a.sin()) * radius
        })
        .collect()
}

/// Point at `along` meters of arc and `lateral` meters to the left.
fn offset(samples: &[Pose2], along: usize, lateral: f64) -> (Vector2<f64>, f64) {
    let p = samples[along.min(samples.len() - 1)];
    (p.transform_point(&Vector2::new(0.0, lateral)), p.theta)
}

fn populate(kind: WorldKind, motion: &MotionProfile, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt());
    let samples = motion.sample_path(1.0);
    let index = PathIndex::new(&samples);
    let mut world = World::default();
    let n = samples.len();
    let add_poly = |world: &mut World, corners: &[Vector2<f64>], refl: f64| {
        if index.polygon_clear(corners) {
            world.add_polygon(corners, refl);
        }
    };
    let add_point = |world: &mut World, p: Vector2<f64>, refl: f64| {
        if index.clear(&p) {
            world.points.push(PointReflector {
                position: p,
                reflectivity: refl,
            });
        }
    };
    for side in [-1.0, 1.0] {
        match kind {
            WorldKind::Urban => {
                // front row of buildings
                let mut s = rng.random_range(0.0..10.0);
                while (s as usize) < n {
                    let len = rng.random_range(8.0..25.0);
                    let depth = rng.random_range(8.0..20.0);
                    let lat = rng.random_range(9.0..15.0) + depth / 2.0;
                    let (c, h) = offset(&samples, (s + len / 2.0) as usize, side * lat);
                    let corners = rectangle(c, h + rng.random_range(-0.15..0.15), len, depth);
                    add_poly(&mut world, &corners, rng.random_range(0.6..1.0));
                    s += len + rng.random_range(3.0..12.0);
                }
                // back row
                let mut s = rng.random_range(0.0..20.0);
                while (s as usize) < n {
                    let len = rng.random_range(15.0..40.0);
                    let lat = rng.random_range(40.0..60.0);
                    let (c, h) = offset(&samples, (s + len / 2.0) as usize, side * lat);
                    let corners = rectangle(c, h + rng.random_range(-0.3..0.3), len, rng.random_range(10.0..25.0));
                    add_poly(&mut world, &corners, rng.random_range(0.6..1.0));
                    s += len + rng.random_range(5.0..20.0);
                }
                // lamp posts and parked cars along the curb
                let mut s = rng.random_range(0.0..15.0);
                while (s as usize) < n {
                    let (p, h) = offset(&samples, s as usize, side * rng.random_range(5.5..7.0));
                    if rng.random_bool(0.3) {
                        add_poly(&mut world, &rectangle(p, h, 4.5, 1.8), rng.random_range(0.5..0.9));
                    } else {
                        add_point(&mut world, p, rng.random_range(0.6..1.0));
                    }
                    s += rng.random_range(8.0..20.0);
                }
            }
            WorldKind::Forest => {
                let mut s = 0.0;
                while (s as usize) < n {
                    let lat = 5.0 + rng.random::<f64>().powi(2) * 55.0;
                    let (p, _) = offset(&samples, s as usize, side * lat);
                    add_point(&mut world, p, rng.random_range(0.4..0.9));
                    s += rng.random_range(0.2..1.2);
                }
                let mut s = rng.random_range(0.0..30.0);
                while (s as usize) < n {
                    let (c, _) = offset(&samples, s as usize, side * rng.random_range(8.0..40.0));
                    let r = rng.random_range(0.6..2.0);
                    let poly = regular_polygon(c, r, 6, rng.random_range(0.0..PI));
                    add_poly(&mut world, &poly, rng.random_range(0.5..0.9));
                    s += rng.random_range(15.0..45.0);
                }
            }
            WorldKind::Industrial => {
                // warehouses
                let mut s = rng.random_range(0.0..15.0);
                while (s as usize) < n {
                    let len = rng.random_range(30.0..60.0);
                    let depth = rng.random_range(20.0..40.0);
                    let lat = rng.random_range(16.0..26.0) + depth / 2.0;
                    let (c, h) = offset(&samples, (s + len / 2.0) as usize, side * lat);
                    add_poly(&mut world, &rectangle(c, h, len, depth), rng.random_range(0.7..1.0));
                    s += len + rng.random_range(6.0..20.0);
                }
                // container stacks
                let mut s = rng.random_range(0.0..20.0);
                while (s as usize) < n {
                    let (c, h) = offset(&samples, s as usize, side * rng.random_range(8.0..14.0));
                    let turn = if rng.random_bool(0.5) { 0.0 } else { FRAC_PI_2 };
                    add_poly(
                        &mut world,
                        &rectangle(c, h + turn, 12.2, 2.4),
                        rng.random_range(0.8..1.0),
                    );
                    s += rng.random_range(14.0..35.0);
                }
                // fence panels with gaps and posts
                let mut s = 0.0;
                while ((s + 3.0) as usize) < n {
                    let lat = side * 6.0;
                    let (a, _) = offset(&samples, s as usize, lat);
                    let (b, _) = offset(&samples, (s + 2.5) as usize, lat);
                    add_poly(&mut world, &[a, b], 0.35);
                    add_point(&mut world, a, 0.8);
                    s += if rng.random_bool(0.15) {
                        rng.random_range(6.0..15.0)
                    } else {
                        3.0
                    };
                }
            }
        }
    }
    world
}
