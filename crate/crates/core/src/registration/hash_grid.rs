//! Spatial hash over surface-point means for fixed-radius nearest-neighbor
//! lookup.
//!
//! Each mean is stored in the bucket of its cell `floor(p / cell_size)`. A
//! query with radius no larger than `cell_size` can only be satisfied by
//! points in the 3×3 block of cells around the query, so lookups touch at
//! most nine buckets.

use std::collections::HashMap;

use nalgebra::Vector2;

use super::RegistrationError;
use crate::features::SurfacePointSet;

#[derive(Debug, Clone)]
pub struct HashGrid {
    cell_size: f64,
    buckets: HashMap<(i64, i64), Vec<u32>>,
}

impl HashGrid {
    pub fn build(set: &SurfacePointSet, cell_size: f64) -> Self {
        Self::from_points(set.points.iter().map(|p| p.mean), cell_size)
    }

    pub fn from_points(points: impl IntoIterator<Item = Vector2<f64>>, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "hash grid cell size must be positive");
        let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.into_iter().enumerate() {
            buckets.entry(Self::key(&p, cell_size)).or_default().push(i as u32);
        }
        Self { cell_size, buckets }
    }

    #[inline]
    fn key(p: &Vector2<f64>, cell_size: f64) -> (i64, i64) {
        ((p.x / cell_size).floor() as i64, (p.y / cell_size).floor() as i64)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, cell: (i64, i64)) -> &[u32] {
        self.buckets.get(&cell).map_or(&[], Vec::as_slice)
    }

    pub fn cell_of(&self, p: &Vector2<f64>) -> (i64, i64) {
        Self::key(p, self.cell_size)
    }

    /// Index of the mean closest to `query` within `radius` (ties go to the
    /// lowest index). `points` must be the sequence the grid was built from.
    pub fn nearest_within(
        &self,
        points: &[Vector2<f64>],
        query: &Vector2<f64>,
        radius: f64,
    ) -> Result<Option<usize>, RegistrationError> {
        if radius > self.cell_size {
            return Err(RegistrationError::RadiusExceedsCell {
                radius,
                cell_size: self.cell_size,
            });
        }
        Ok(self.nearest_unchecked(|i| points[i], query, radius))
    }

    #[inline]
    pub(crate) fn nearest_unchecked(
        &self,
        mean: impl Fn(usize) -> Vector2<f64>,
        query: &Vector2<f64>,
        radius: f64,
    ) -> Option<usize> {
        let (cx, cy) = self.cell_of(query);
        let r2 = radius * radius;
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &idx in bucket {
                    let idx = idx as usize;
                    let d2 = (mean(idx) - query).norm_squared();
                    if d2 > r2 {
                        continue;
                    }
                    match best {
                        Some((bd, bi)) if d2 > bd || (d2 == bd && idx > bi) => {}
                        _ => best = Some((d2, idx)),
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Linear-scan reference for [`HashGrid::nearest_within`].
pub fn nearest_within_brute_force(points: &[Vector2<f64>], query: &Vector2<f64>, radius: f64) -> Option<usize> {
    let r2 = radius * radius;
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if d2 <= r2 && best.is_none_or(|(bd, _)| d2 < bd) {
            best = Some((d2, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Convenience wrapper over a surface-point set.
pub fn nearest_within(
    grid: &HashGrid,
    set: &SurfacePointSet,
    query: &Vector2<f64>,
    radius: f64,
) -> Result<Option<usize>, RegistrationError> {
    if radius > grid.cell_size() {
        return Err(RegistrationError::RadiusExceedsCell {
            radius,
            cell_size: grid.cell_size(),
        });
    }
    Ok(grid.nearest_unchecked(|i| set.points[i].mean, query, radius))
}
