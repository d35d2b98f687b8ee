//! Software z-buffer renderer: semantic label maps and depth maps from the
//! point-cloud map via class-dependent splatting, plus the orthographic
//! bird-view raster.
//!
//! Splat footprint rule: a point projecting to continuous pixel coordinates
//! `(u, v)` at depth `d` with world-space square size `s_c` covers the
//! axis-aligned pixel block whose column indices lie in
//! `[floor(u - s/2), floor(u + s/2)]` (rows likewise), where
//! `s = s_c * fx / d` is the screen-space side in pixels. The block is
//! clipped to the raster and never empty, so distant points are never lost;
//! with `s_c = 0` a point covers exactly the pixel `project` returns. Depth
//! is constant across a footprint. Ties at a pixel resolve to the smaller
//! point index, which makes rendering independent of iteration order.

mod raster_io;

pub use raster_io::{read_depth_map, read_pgm, write_depth_map, write_pgm, RasterIoError};

use std::collections::HashMap;

use crate::geometry::{project, CameraModel, CameraPose};
use crate::map::{SemanticPointCloud, IGNORE_ID};

/// Default world-space splat size clamp range, meters.
pub const DEFAULT_SPLAT_RANGE: (f64, f64) = (0.025, 0.05);

/// Per-pixel class-ID raster; 255 marks pixels with no data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, IGNORE_ID as u16)
    }

    pub fn filled(width: u32, height: u32, value: u16) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Self {
            width,
            height,
            data,
        }
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
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u16) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    #[inline]
    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn same_dims(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel depth raster in meters; `+inf` marks empty pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![f64::INFINITY; width as usize * height as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Self {
            width,
            height,
            data,
        }
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
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-class world-space splat sizes, clamped to `[s_min, s_max]`.
#[derive(Debug, Clone)]
pub struct SplatConfig {
    sizes: HashMap<u16, f64>,
    s_min: f64,
    s_max: f64,
}

impl SplatConfig {
    /// The same size for every class (classes absent from `sizes` fall back
    /// to `s_min`, so this just fixes the fallback).
    pub fn uniform(size: f64) -> Self {
        Self {
            sizes: HashMap::new(),
            s_min: size,
            s_max: size,
        }
    }

    /// Splat size for a class; classes without an entry get `s_min`.
    #[inline]
    pub fn size_for(&self, class_id: u16) -> f64 {
        self.sizes.get(&class_id).copied().unwrap_or(self.s_min)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.s_min, self.s_max)
    }

    /// Classes with explicit sizes, in ascending class order.
    pub fn entries(&self) -> Vec<(u16, f64)> {
        let mut v: Vec<(u16, f64)> = self.sizes.iter().map(|(&c, &s)| (c, s)).collect();
        v.sort_unstable_by_key(|&(c, _)| c);
        v
    }
}

/// Derives per-class splat sizes from the map and the trajectory.
///
/// For each class present, computes the mean over its points of the minimum
/// distance to any pose translation, then rescales the means linearly so the
/// smallest maps to `s_min` and the largest to `s_max`. With a single class
/// (or equal means) everything gets `s_min`.
pub fn compute_splat_sizes(
    cloud: &SemanticPointCloud,
    poses: &[CameraPose],
    range: (f64, f64),
) -> SplatConfig {
    let (s_min, s_max) = range;
    assert!(
        s_min > 0.0 && s_max >= s_min,
        "invalid splat range [{s_min}, {s_max}]"
    );
    let mut sums: HashMap<u16, (f64, usize)> = HashMap::new();
    for p in cloud.points() {
        let mut best = f64::INFINITY;
        for pose in poses {
            let d = (p.position - pose.translation()).norm();
            if d < best {
                best = d;
            }
        }
        if best.is_finite() {
            let entry = sums.entry(p.class_id).or_insert((0.0, 0));
            entry.0 += best;
            entry.1 += 1;
        }
    }
    let means: Vec<(u16, f64)> = sums
        .into_iter()
        .map(|(c, (sum, n))| (c, sum / n as f64))
        .collect();
    let mut sizes = HashMap::new();
    if !means.is_empty() {
        let lo = means.iter().map(|&(_, m)| m).fold(f64::INFINITY, f64::min);
        let hi = means
            .iter()
            .map(|&(_, m)| m)
            .fold(f64::NEG_INFINITY, f64::max);
        for (c, m) in means {
            let size = if hi - lo > 1e-12 {
                s_min + (m - lo) / (hi - lo) * (s_max - s_min)
            } else {
                s_min
            };
            sizes.insert(c, size);
        }
    }
    SplatConfig {
        sizes,
        s_min,
        s_max,
    }
}

/// Pixel block covered by a splat of screen side `side_px` centered at `c`,
/// as an inclusive index range clipped to `[0, limit)`.
#[inline]
fn footprint_range(c: f64, side_px: f64, limit: u32) -> Option<(u32, u32)> {
    let lo = (c - side_px * 0.5).floor();
    let hi = (c + side_px * 0.5).floor();
    let lo = lo.max(0.0) as i64;
    let hi = hi.min(limit as f64 - 1.0) as i64;
    if lo > hi {
        return None;
    }
    Some((lo as u32, hi as u32))
}

/// Renders the map into a label map and a depth map with z-buffering.
pub fn render(
    cloud: &SemanticPointCloud,
    pose: &CameraPose,
    cam: &CameraModel,
    splat: &SplatConfig,
) -> (LabelMap, DepthMap) {
    let mut label = LabelMap::new(cam.width, cam.height);
    let mut depth = DepthMap::new(cam.width, cam.height);
    for p in cloud.points() {
        let Some(proj) = project(&p.position, pose, cam) else {
            continue;
        };
        let side_px = splat.size_for(p.class_id) * cam.fx / proj.depth;
        let Some((x0, x1)) = footprint_range(proj.u, side_px, cam.width) else {
            continue;
        };
        let Some((y0, y1)) = footprint_range(proj.v, side_px, cam.height) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if proj.depth < depth.get(x, y) {
                    depth.set(x, y, proj.depth);
                    label.set(x, y, p.class_id);
                }
            }
        }
    }
    (label, depth)
}

/// Fraction of label-map pixels holding data (not 255).
pub fn coverage(label: &LabelMap) -> f64 {
    if label.data.is_empty() {
        return 0.0;
    }
    let covered = label
        .data
        .iter()
        .filter(|&&v| v != IGNORE_ID as u16)
        .count();
    covered as f64 / label.data.len() as f64
}

/// Axis-aligned 2D region for the bird-view raster, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirdviewBounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BirdviewBounds {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }
}

/// Top-down orthographic raster: per cell the intensity and class of the
/// highest point, with 255 / 0.0 for empty cells.
#[derive(Debug, Clone)]
pub struct BirdviewRaster {
    pub width: u32,
    pub height: u32,
    pub labels: LabelMap,
    pub intensity: Vec<f32>,
    top_z: Vec<f64>,
}

impl BirdviewRaster {
    #[inline]
    pub fn is_occupied(&self, x: u32, y: u32) -> bool {
        self.top_z[y as usize * self.width as usize + x as usize].is_finite()
    }

    #[inline]
    pub fn intensity_at(&self, x: u32, y: u32) -> f32 {
        self.intensity[y as usize * self.width as usize + x as usize]
    }
}

/// Orthographic top-down projection of (road) points.
///
/// Cell `(col, row)` covers `[min + col*res, min + (col+1)*res)`; per cell the
/// highest-z point wins (ties to the smaller point index).
pub fn render_birdview(
    cloud: &SemanticPointCloud,
    bounds: BirdviewBounds,
    resolution: f64,
) -> BirdviewRaster {
    assert!(resolution > 0.0, "resolution must be positive");
    assert!(
        bounds.max_x > bounds.min_x && bounds.max_y > bounds.min_y,
        "degenerate bird-view bounds"
    );
    let width = ((bounds.max_x - bounds.min_x) / resolution).ceil().max(1.0) as u32;
    let height = ((bounds.max_y - bounds.min_y) / resolution).ceil().max(1.0) as u32;
    let n = width as usize * height as usize;
    let mut raster = BirdviewRaster {
        width,
        height,
        labels: LabelMap::new(width, height),
        intensity: vec![0.0; n],
        top_z: vec![f64::NEG_INFINITY; n],
    };
    for p in cloud.points() {
        let col = ((p.position.x - bounds.min_x) / resolution).floor();
        let row = ((p.position.y - bounds.min_y) / resolution).floor();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            continue;
        }
        let (col, row) = (col as u32, row as u32);
        let idx = row as usize * width as usize + col as usize;
        if p.position.z > raster.top_z[idx] {
            raster.top_z[idx] = p.position.z;
            raster.labels.set(col, row, p.class_id);
            raster.intensity[idx] = p.intensity;
        }
    }
    for z in &mut raster.top_z {
        if !z.is_finite() {
            *z = f64::INFINITY; // empty-cell marker
        }
    }
    raster
}
