//! Uniform voxel-hash spatial index over point positions.
//!
//! Cells are cubes of fixed side length keyed by `floor(p / cell)`; only
//! occupied cells are stored. Query results are returned in ascending point
//! index order so every caller sees a deterministic ordering.

use nalgebra::Vector3;
use std::collections::HashMap;

use super::SemanticPoint;

#[derive(Debug, Clone)]
pub(crate) struct VoxelGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    key_min: (i64, i64, i64),
    key_max: (i64, i64, i64),
}

impl VoxelGrid {
    pub(crate) fn build(points: &[SemanticPoint], cell: f64) -> Self {
        assert!(cell > 0.0, "voxel cell size must be positive");
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut key_min = (i64::MAX, i64::MAX, i64::MAX);
        let mut key_max = (i64::MIN, i64::MIN, i64::MIN);
        for (idx, p) in points.iter().enumerate() {
            let key = Self::key_of(&p.position, cell);
            key_min = (
                key_min.0.min(key.0),
                key_min.1.min(key.1),
                key_min.2.min(key.2),
            );
            key_max = (
                key_max.0.max(key.0),
                key_max.1.max(key.1),
                key_max.2.max(key.2),
            );
            cells.entry(key).or_default().push(idx as u32);
        }
        Self {
            cell,
            cells,
            key_min,
            key_max,
        }
    }

    #[inline]
    fn key_of(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Indices of points with `|p - center| < radius` (strict), ascending.
    pub(crate) fn radius_indices(
        &self,
        points: &[SemanticPoint],
        center: &Vector3<f64>,
        radius: f64,
    ) -> Vec<u32> {
        let mut out = Vec::new();
        self.for_each_candidate(center, radius, |idx| {
            if (points[idx as usize].position - center).norm_squared() < radius * radius {
                out.push(idx);
            }
        });
        out.sort_unstable();
        out
    }

    /// Whether any point lies strictly within `radius` of `center`.
    pub(crate) fn any_within(
        &self,
        points: &[SemanticPoint],
        center: &Vector3<f64>,
        radius: f64,
    ) -> bool {
        let r2 = radius * radius;
        let lo = Self::key_of(&(center - Vector3::repeat(radius)), self.cell);
        let hi = Self::key_of(&(center + Vector3::repeat(radius)), self.cell);
        for kx in lo.0..=hi.0 {
            for ky in lo.1..=hi.1 {
                for kz in lo.2..=hi.2 {
                    if let Some(bucket) = self.cells.get(&(kx, ky, kz)) {
                        for &idx in bucket {
                            if (points[idx as usize].position - center).norm_squared() < r2 {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }

    fn for_each_candidate(&self, center: &Vector3<f64>, radius: f64, mut f: impl FnMut(u32)) {
        if self.cells.is_empty() {
            return;
        }
        let lo = Self::key_of(&(center - Vector3::repeat(radius)), self.cell);
        let hi = Self::key_of(&(center + Vector3::repeat(radius)), self.cell);
        for kx in lo.0.max(self.key_min.0)..=hi.0.min(self.key_max.0) {
            for ky in lo.1.max(self.key_min.1)..=hi.1.min(self.key_max.1) {
                for kz in lo.2.max(self.key_min.2)..=hi.2.min(self.key_max.2) {
                    if let Some(bucket) = self.cells.get(&(kx, ky, kz)) {
                        for &idx in bucket {
                            f(idx);
                        }
                    }
                }
            }
        }
    }

    /// Indices of the `k` nearest points (ties broken by smaller index).
    pub(crate) fn knn_indices(
        &self,
        points: &[SemanticPoint],
        center: &Vector3<f64>,
        k: usize,
    ) -> Vec<u32> {
        if k == 0 || self.cells.is_empty() {
            return Vec::new();
        }
        let center_key = Self::key_of(center, self.cell);
        let max_ring = {
            let span = |lo: i64, hi: i64, c: i64| (c - lo).max(hi - c).max(0);
            span(self.key_min.0, self.key_max.0, center_key.0)
                .max(span(self.key_min.1, self.key_max.1, center_key.1))
                .max(span(self.key_min.2, self.key_max.2, center_key.2))
        };
        let mut candidates: Vec<(f64, u32)> = Vec::new();
        for ring in 0..=max_ring {
            self.for_each_ring_cell(center_key, ring, |bucket| {
                for &idx in bucket {
                    let d2 = (points[idx as usize].position - center).norm_squared();
                    candidates.push((d2, idx));
                }
            });
            if candidates.len() >= k {
                candidates.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                // points in ring r+1 and beyond are at least r*cell away
                let guaranteed = (ring as f64) * self.cell;
                if candidates[k - 1].0 <= guaranteed * guaranteed {
                    break;
                }
            }
        }
        candidates.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        candidates.truncate(k);
        candidates.into_iter().map(|(_, idx)| idx).collect()
    }

    fn for_each_ring_cell(
        &self,
        center: (i64, i64, i64),
        ring: i64,
        mut f: impl FnMut(&Vec<u32>),
    ) {
        let (cx, cy, cz) = center;
        if ring == 0 {
            if let Some(b) = self.cells.get(&center) {
                f(b);
            }
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(b) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        f(b);
                    }
                }
            }
        }
    }
}
