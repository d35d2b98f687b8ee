//! Road raster and offset field for translation rectification.
//!
//! The map's road points rasterize onto a 2D grid; every cell then gets the
//! offset (meters) to its nearest road cell under the 8-connected chamfer
//! metric with step weights 1 and √2. Equal-metric ties resolve to the road
//! cell with the smallest linear index, which makes the field deterministic.
//!
//! Chamfer path lengths are maintained as integer pairs
//! `(diagonal steps, straight steps)` and compared exactly (√2 is
//! irrational, so `√2·d + s` determines the pair uniquely); the expansion is
//! a multi-source best-first search over those exact keys, so the result
//! matches an exhaustive per-cell scan of all road cells bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::bytesio;
use crate::map::{class_id, SemanticPointCloud};

/// Default rasterization grid resolution, meters per cell.
pub const DEFAULT_GRID_RESOLUTION: f64 = 0.05;

/// Default road-surface classes used to build the road mask.
pub const DEFAULT_ROAD_CLASSES: &[u16] = &[class_id::ROAD, class_id::SIDEWALK];

const MAGIC: &[u8; 4] = b"ROF1";

#[derive(Debug, thiserror::Error)]
pub enum RoadError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("the road mask contains no road cells")]
    NoRoadCells,
    #[error("map is empty")]
    EmptyMap,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad magic bytes; not an offset-field file")]
    BadMagic,
}

/// Exact chamfer path length: `diag` diagonal steps (√2 each) plus
/// `straight` axis steps (1 each).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ChamferKey {
    diag: u32,
    straight: u32,
}

impl ChamferKey {
    const ZERO: Self = Self {
        diag: 0,
        straight: 0,
    };

    /// Closed-form chamfer length between two cells at deltas `(dx, dy)`.
    fn between(dx: i64, dy: i64) -> Self {
        let (ax, ay) = (dx.unsigned_abs(), dy.unsigned_abs());
        let m = ax.min(ay);
        let k = ax.max(ay) - m;
        Self {
            diag: m as u32,
            straight: k as u32,
        }
    }

    fn step_straight(self) -> Self {
        Self {
            straight: self.straight + 1,
            ..self
        }
    }

    fn step_diag(self) -> Self {
        Self {
            diag: self.diag + 1,
            ..self
        }
    }

    fn meters(self, resolution: f64) -> f64 {
        (std::f64::consts::SQRT_2 * f64::from(self.diag) + f64::from(self.straight)) * resolution
    }

    /// Exact comparison of `√2·diag + straight` without floating point.
    fn cmp_metric(self, other: Self) -> Ordering {
        let dd = i64::from(self.diag) - i64::from(other.diag);
        let ds = i64::from(other.straight) - i64::from(self.straight);
        // compare √2·dd against ds
        match (dd.cmp(&0), ds.cmp(&0)) {
            (Ordering::Equal, _) => 0i64.cmp(&ds),
            (Ordering::Greater, Ordering::Less) | (Ordering::Greater, Ordering::Equal) => {
                Ordering::Greater
            }
            (Ordering::Less, Ordering::Greater) | (Ordering::Less, Ordering::Equal) => {
                Ordering::Less
            }
            (Ordering::Greater, Ordering::Greater) => {
                (2i128 * i128::from(dd) * i128::from(dd)).cmp(&(i128::from(ds) * i128::from(ds)))
            }
            (Ordering::Less, Ordering::Less) => {
                (i128::from(ds) * i128::from(ds)).cmp(&(2i128 * i128::from(dd) * i128::from(dd)))
            }
        }
    }
}

/// Search frontier entry ordered by (metric, source index); `BinaryHeap` is a
/// max-heap so the ordering is reversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Frontier {
    key: ChamferKey,
    source: u32,
    cell: u32,
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .cmp_metric(self.key)
            .then_with(|| other.source.cmp(&self.source))
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 2D grid of offsets-to-nearest-road used for translation rectification.
#[derive(Debug, Clone)]
pub struct RoadOffsetField {
    origin: (f64, f64),
    resolution: f64,
    width: u32,
    height: u32,
    mask: Vec<bool>,
    nearest: Vec<u32>,
    distance: Vec<ChamferKey>,
}

impl RoadOffsetField {
    /// Builds the field from a semantic map: cells containing any point of a
    /// road class become sources; everything else gets its nearest road cell.
    pub fn build(
        map: &SemanticPointCloud,
        road_classes: &[u16],
        resolution: f64,
    ) -> Result<Self, RoadError> {
        if !(resolution > 0.0) {
            return Err(RoadError::InvalidParameter(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        let (lo, hi) = map.bounding_box().ok_or(RoadError::EmptyMap)?;
        let origin = (lo.x, lo.y);
        let width = ((hi.x - lo.x) / resolution).floor() as u32 + 1;
        let height = ((hi.y - lo.y) / resolution).floor() as u32 + 1;
        let mut mask = vec![false; width as usize * height as usize];
        for p in map.points() {
            if road_classes.contains(&p.class_id) {
                let col = ((p.position.x - origin.0) / resolution).floor() as u32;
                let row = ((p.position.y - origin.1) / resolution).floor() as u32;
                mask[row as usize * width as usize + col as usize] = true;
            }
        }
        Self::from_mask(mask, width, height, origin, resolution)
    }

    /// Builds the field from an explicit road mask (row-major).
    pub fn from_mask(
        mask: Vec<bool>,
        width: u32,
        height: u32,
        origin: (f64, f64),
        resolution: f64,
    ) -> Result<Self, RoadError> {
        assert_eq!(mask.len(), width as usize * height as usize);
        if !(resolution > 0.0) {
            return Err(RoadError::InvalidParameter(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(RoadError::NoRoadCells);
        }
        let n = mask.len();
        let mut nearest = vec![u32::MAX; n];
        let mut distance = vec![
            ChamferKey {
                diag: u32::MAX,
                straight: u32::MAX,
            };
            n
        ];
        let mut settled = vec![false; n];
        let mut best: Vec<(ChamferKey, u32)> = vec![
            (
                ChamferKey {
                    diag: u32::MAX,
                    straight: u32::MAX,
                },
                u32::MAX,
            );
            n
        ];
        let mut heap = BinaryHeap::new();
        for (idx, &is_road) in mask.iter().enumerate() {
            if is_road {
                let entry = Frontier {
                    key: ChamferKey::ZERO,
                    source: idx as u32,
                    cell: idx as u32,
                };
                best[idx] = (entry.key, entry.source);
                heap.push(entry);
            }
        }
        let w = width as i64;
        let h = height as i64;
        while let Some(entry) = heap.pop() {
            let cell = entry.cell as usize;
            if settled[cell] {
                continue;
            }
            settled[cell] = true;
            nearest[cell] = entry.source;
            distance[cell] = entry.key;
            let col = entry.cell as i64 % w;
            let row = entry.cell as i64 / w;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nc, nr) = (col + dx, row + dy);
                    if nc < 0 || nr < 0 || nc >= w || nr >= h {
                        continue;
                    }
                    let nidx = (nr * w + nc) as usize;
                    if settled[nidx] {
                        continue;
                    }
                    let key = if dx != 0 && dy != 0 {
                        entry.key.step_diag()
                    } else {
                        entry.key.step_straight()
                    };
                    let candidate = (key, entry.source);
                    let incumbent = best[nidx];
                    let better = match key.cmp_metric(incumbent.0) {
                        Ordering::Less => true,
                        Ordering::Equal => entry.source < incumbent.1,
                        Ordering::Greater => false,
                    };
                    if better {
                        best[nidx] = candidate;
                        heap.push(Frontier {
                            key,
                            source: entry.source,
                            cell: nidx as u32,
                        });
                    }
                }
            }
        }
        Ok(Self {
            origin,
            resolution,
            width,
            height,
            mask,
            nearest,
            distance,
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    #[inline]
    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    #[inline]
    pub fn is_road_cell(&self, col: u32, row: u32) -> bool {
        self.mask[row as usize * self.width as usize + col as usize]
    }

    /// Linear index of the nearest road cell for a given cell.
    #[inline]
    pub fn nearest_road_cell(&self, col: u32, row: u32) -> u32 {
        self.nearest[row as usize * self.width as usize + col as usize]
    }

    /// Chamfer distance to the nearest road cell, meters.
    pub fn chamfer_distance_m(&self, col: u32, row: u32) -> f64 {
        self.distance[row as usize * self.width as usize + col as usize].meters(self.resolution)
    }

    #[inline]
    fn cell_center(&self, idx: u32) -> (f64, f64) {
        let col = idx % self.width;
        let row = idx / self.width;
        (
            self.origin.0 + (f64::from(col) + 0.5) * self.resolution,
            self.origin.1 + (f64::from(row) + 0.5) * self.resolution,
        )
    }

    /// Grid cell containing a world coordinate; queries outside the field
    /// clamp to the border cell.
    pub fn cell_of_world(&self, x: f64, y: f64) -> (u32, u32) {
        let col = ((x - self.origin.0) / self.resolution).floor();
        let row = ((y - self.origin.1) / self.resolution).floor();
        (
            col.clamp(0.0, f64::from(self.width - 1)) as u32,
            row.clamp(0.0, f64::from(self.height - 1)) as u32,
        )
    }

    /// Offset (meters) from a cell's center to its nearest road cell center;
    /// `(0, 0)` for road cells.
    pub fn offset_at_cell(&self, col: u32, row: u32) -> (f64, f64) {
        let idx = row * self.width + col;
        let target = self.nearest[idx as usize];
        let (cx, cy) = self.cell_center(idx);
        let (tx, ty) = self.cell_center(target);
        (tx - cx, ty - cy)
    }

    /// Offset read at the cell containing the world coordinate.
    pub fn offset_at_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (col, row) = self.cell_of_world(x, y);
        self.offset_at_cell(col, row)
    }

    /// Snaps a translation onto the road region: `(x + f_x, y + f_y, z)`
    /// with `f` read at the cell containing `(x, y)`; `z` is unchanged.
    ///
    /// Queries outside the field clamp to the border cell; the out-of-field
    /// coordinate snaps to that cell's center first so the result still
    /// lands on a road cell and rectification stays idempotent.
    pub fn rectify_translation(&self, t: &Vector3<f64>) -> Vector3<f64> {
        let (col, row) = self.cell_of_world(t.x, t.y);
        let idx = row * self.width + col;
        let (cx, cy) = self.cell_center(idx);
        let in_x = t.x >= self.origin.0 && t.x < self.origin.0 + f64::from(self.width) * self.resolution;
        let in_y = t.y >= self.origin.1 && t.y < self.origin.1 + f64::from(self.height) * self.resolution;
        let x_eff = if in_x { t.x } else { cx };
        let y_eff = if in_y { t.y } else { cy };
        let (fx, fy) = self.offset_at_cell(col, row);
        Vector3::new(x_eff + fx, y_eff + fy, t.z)
    }

    /// Serializes as `ROF1`: origin, resolution, dims, then per cell one
    /// mask byte plus the offset as two f32s.
    pub fn save(&self, path: &Path) -> Result<(), RoadError> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        bytesio::write_f64(&mut out, self.origin.0)?;
        bytesio::write_f64(&mut out, self.origin.1)?;
        bytesio::write_f64(&mut out, self.resolution)?;
        bytesio::write_u32(&mut out, self.width)?;
        bytesio::write_u32(&mut out, self.height)?;
        for row in 0..self.height {
            for col in 0..self.width {
                let idx = (row as usize) * self.width as usize + col as usize;
                out.write_all(&[u8::from(self.mask[idx])])?;
                let (ox, oy) = self.offset_at_cell(col, row);
                bytesio::write_f32(&mut out, ox as f32)?;
                bytesio::write_f32(&mut out, oy as f32)?;
            }
        }
        Ok(())
    }

    /// Loads a field saved by [`RoadOffsetField::save`]. Nearest-cell indices
    /// are recovered from the stored offsets; chamfer distances are rebuilt
    /// from the cell deltas.
    pub fn load(path: &Path) -> Result<Self, RoadError> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        if !bytesio::read_magic(&mut reader, MAGIC)? {
            return Err(RoadError::BadMagic);
        }
        let origin = (
            bytesio::read_f64(&mut reader)?,
            bytesio::read_f64(&mut reader)?,
        );
        let resolution = bytesio::read_f64(&mut reader)?;
        let width = bytesio::read_u32(&mut reader)?;
        let height = bytesio::read_u32(&mut reader)?;
        let n = width as usize * height as usize;
        let mut mask = Vec::with_capacity(n);
        let mut nearest = Vec::with_capacity(n);
        let mut distance = Vec::with_capacity(n);
        for idx in 0..n {
            let mut byte = [0u8; 1];
            std::io::Read::read_exact(&mut reader, &mut byte)?;
            mask.push(byte[0] != 0);
            let ox = f64::from(bytesio::read_f32(&mut reader)?);
            let oy = f64::from(bytesio::read_f32(&mut reader)?);
            let col = (idx as u32) % width;
            let row = (idx as u32) / width;
            let tcol = (f64::from(col) + 0.5 + ox / resolution).floor();
            let trow = (f64::from(row) + 0.5 + oy / resolution).floor();
            let tcol = tcol.clamp(0.0, f64::from(width - 1)) as u32;
            let trow = trow.clamp(0.0, f64::from(height - 1)) as u32;
            nearest.push(trow * width + tcol);
            distance.push(ChamferKey::between(
                i64::from(tcol) - i64::from(col),
                i64::from(trow) - i64::from(row),
            ));
        }
        Ok(Self {
            origin,
            resolution,
            width,
            height,
            mask,
            nearest,
            distance,
        })
    }
}

/// Exhaustive nearest-road search under the same chamfer metric and
/// tie-break; quadratic, intended for validation on small grids.
pub fn nearest_road_brute_force(mask: &[bool], width: u32, height: u32) -> Vec<u32> {
    let road: Vec<u32> = mask
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m)
        .map(|(i, _)| i as u32)
        .collect();
    let mut out = vec![u32::MAX; mask.len()];
    for idx in 0..mask.len() as u32 {
        let (col, row) = (idx % width, idx / width);
        let mut best: Option<(ChamferKey, u32)> = None;
        for &src in &road {
            let (scol, srow) = (src % width, src / width);
            let key = ChamferKey::between(
                i64::from(scol) - i64::from(col),
                i64::from(srow) - i64::from(row),
            );
            let replace = match best {
                None => true,
                Some((bk, bs)) => match key.cmp_metric(bk) {
                    Ordering::Less => true,
                    Ordering::Equal => src < bs,
                    Ordering::Greater => false,
                },
            };
            if replace {
                best = Some((key, src));
            }
        }
        out[idx as usize] = best.expect("non-empty road set").1;
    }
    let _ = height;
    out
}
