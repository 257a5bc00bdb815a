//! Spinning 2D radar odometry.
//!
//! The pipeline per sweep:
//!
//! 1. [`filtering::k_strongest`] keeps the strongest returns per azimuth,
//! 2. [`features::motion_compensate`] removes the distortion caused by motion
//!    during the sweep,
//! 3. [`features::compute_surface_points`] summarizes the returns as oriented
//!    surface points on a grid,
//! 4. [`registration::solve`] aligns them against a queue of keyframes.
//!
//! [`odometry::Odometry`] ties the stages together. [`evaluation`] computes
//! drift over 100–800 m segments and [`synth`] generates synthetic sweeps
//! with known ground truth.

pub mod cli;
pub mod evaluation;
pub mod features;
pub mod filtering;
pub mod odometry;
pub mod pose;
pub mod registration;
pub mod scan_io;
pub mod synth;

pub use pose::{Pose2, Twist2};
