//! k-strongest filtering: per azimuth, keep the k highest returns that exceed
//! an intensity threshold.

use std::cmp::Ordering;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::scan_io::{PolarScan, RangeMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Returns kept per azimuth.
    pub k: usize,
    /// Normalized intensity a return must strictly exceed.
    pub z_min: f32,
    /// Returns closer than this many meters are discarded.
    pub r_min: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            k: 12,
            z_min: 60.0 / 255.0,
            r_min: 2.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("filter.k must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.z_min) {
            return Err(format!("filter.z_min must lie in [0, 1), got {}", self.z_min));
        }
        if self.r_min.is_nan() || self.r_min < 0.0 {
            return Err(format!("filter.r_min must be >= 0, got {}", self.r_min));
        }
        Ok(())
    }
}

/// A return that survived filtering, in the sensor frame at its own
/// acquisition time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredPoint {
    pub position: Vector2<f64>,
    pub intensity: f32,
    pub time: f64,
    pub azimuth_index: usize,
    pub range_bin: usize,
}

/// Range to the center of `range_bin`.
#[inline]
pub fn bin_range(range_bin: usize, meta: &RangeMeta) -> f64 {
    meta.range_offset + (range_bin as f64 + 0.5) * meta.range_resolution
}

pub fn polar_to_cartesian(azimuth: f64, range_bin: usize, meta: &RangeMeta) -> Vector2<f64> {
    let r = bin_range(range_bin, meta);
    let (s, c) = azimuth.sin_cos();
    Vector2::new(r * c, r * s)
}

// Descending intensity, then ascending bin.
#[inline]
fn strongest_first(row: &[f32]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

/// Selects up to `cfg.k` returns per azimuth. Output is azimuth-major, then
/// descending intensity, then ascending range bin.
pub fn k_strongest(scan: &PolarScan, cfg: &FilterConfig) -> Vec<FilteredPoint> {
    let meta = scan.meta();
    // first bin whose center is at or beyond r_min
    let guess = ((cfg.r_min - meta.range_offset) / meta.range_resolution - 0.5)
        .ceil()
        .max(0.0) as usize;
    let first_bin = (guess.saturating_sub(1)..scan.n_bins())
        .find(|&b| bin_range(b, &meta) >= cfg.r_min)
        .unwrap_or(scan.n_bins());

    let mut out = Vec::with_capacity(cfg.k * scan.n_azimuths());
    let mut candidates: Vec<usize> = Vec::with_capacity(scan.n_bins());
    for az in 0..scan.n_azimuths() {
        let row = scan.row(az);
        candidates.clear();
        candidates.extend((first_bin..row.len()).filter(|&b| row[b] > cfg.z_min));
        let order = strongest_first(row);
        if candidates.len() > cfg.k {
            candidates.select_nth_unstable_by(cfg.k - 1, &order);
            candidates.truncate(cfg.k);
        }
        candidates.sort_unstable_by(&order);

        let angle = scan.azimuth_angles()[az];
        let time = scan.azimuth_times()[az];
        out.extend(candidates.iter().map(|&b| FilteredPoint {
            position: polar_to_cartesian(angle, b, &meta),
            intensity: row[b],
            time,
            azimuth_index: az,
            range_bin: b,
        }));
    }
    out
}
