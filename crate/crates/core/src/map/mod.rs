//! Multi-round semantic point clouds, the class registry, and
//! temporal-consistency moving-object removal.

mod io;
mod registry;
mod voxel;

pub use io::{load_cloud, read_cloud_ascii, read_cloud_binary, write_cloud_ascii, write_cloud_binary};
pub use registry::{class_id, ClassEntry, ClassGroup, ClassRegistry, IGNORE_ID};

use nalgebra::Vector3;
use voxel::VoxelGrid;

/// Default support fraction for moving-object removal.
pub const DEFAULT_DELTA: f64 = 0.6;
/// Default neighbor radius for moving-object removal (meters).
pub const DEFAULT_EPS_D: f64 = 0.025;
/// Neighborhood size used for normal estimation.
pub const NORMAL_NEIGHBORS: usize = 16;

/// Cell side of the general-purpose spatial index (meters).
const INDEX_CELL_M: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate class id {0}")]
    DuplicateClassId(u16),
    #[error("unknown class group {group:?} at line {line}")]
    UnknownGroup { line: usize, group: String },
    #[error("round {index} carries round id {found}, expected {expected}")]
    MismatchedFrame {
        index: usize,
        expected: u16,
        found: u16,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad magic bytes; not a point-cloud binary file")]
    BadMagic,
}

/// A single map point: position, class label, LIDAR intensity, and the
/// acquisition round it was recorded in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticPoint {
    pub position: Vector3<f64>,
    pub class_id: u16,
    pub intensity: f32,
    pub round: u16,
}

impl SemanticPoint {
    pub fn new(position: Vector3<f64>, class_id: u16, intensity: f32, round: u16) -> Self {
        Self {
            position,
            class_id,
            intensity,
            round,
        }
    }
}

/// An immutable point cloud with a spatial index; frozen after construction,
/// so all queries are safe to run concurrently.
#[derive(Debug, Clone)]
pub struct SemanticPointCloud {
    points: Vec<SemanticPoint>,
    rounds: u16,
    grid: VoxelGrid,
}

impl SemanticPointCloud {
    pub fn new(points: Vec<SemanticPoint>) -> Self {
        let rounds = points
            .iter()
            .map(|p| p.round)
            .max()
            .map_or(0, |m| m + 1);
        let grid = VoxelGrid::build(&points, INDEX_CELL_M);
        Self {
            points,
            rounds,
            grid,
        }
    }

    #[inline]
    pub fn points(&self) -> &[SemanticPoint] {
        &self.points
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of acquisition rounds: 1 + the largest round index present.
    #[inline]
    pub fn rounds(&self) -> u16 {
        self.rounds
    }

    /// Indices of points strictly within `radius` of `center`, ascending.
    pub fn radius_indices(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        self.grid
            .radius_indices(&self.points, center, radius)
            .into_iter()
            .map(|i| i as usize)
            .collect()
    }

    /// Points strictly within `radius` of `center`.
    pub fn radius_neighbors(&self, center: &Vector3<f64>, radius: f64) -> Vec<&SemanticPoint> {
        self.radius_indices(center, radius)
            .into_iter()
            .map(|i| &self.points[i])
            .collect()
    }

    /// Indices of the `k` nearest points to `center` (ties by smaller index).
    pub fn knn_indices(&self, center: &Vector3<f64>, k: usize) -> Vec<usize> {
        self.grid
            .knn_indices(&self.points, center, k)
            .into_iter()
            .map(|i| i as usize)
            .collect()
    }

    /// Axis-aligned bounding box, or `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?;
        let mut lo = first.position;
        let mut hi = first.position;
        for p in &self.points[1..] {
            lo = lo.inf(&p.position);
            hi = hi.sup(&p.position);
        }
        Some((lo, hi))
    }
}

/// Removes transient points by temporal consistency across acquisition rounds.
///
/// A point from round `j` is kept when the fraction of rounds containing a
/// neighbor strictly within `eps_d` (the point's own round always counts)
/// reaches `delta`. Inputs must be pre-aligned in a common world frame, and
/// the cloud at list position `i` must carry round id `i`.
pub fn remove_moving(
    rounds: &[SemanticPointCloud],
    delta: f64,
    eps_d: f64,
) -> Result<SemanticPointCloud, MapError> {
    if rounds.is_empty() {
        return Err(MapError::InvalidParameter("no rounds supplied".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(MapError::InvalidParameter(format!(
            "delta must be in (0, 1], got {delta}"
        )));
    }
    if !(eps_d > 0.0) {
        return Err(MapError::InvalidParameter(format!(
            "eps_d must be positive, got {eps_d}"
        )));
    }
    for (index, cloud) in rounds.iter().enumerate() {
        let expected = index as u16;
        if let Some(p) = cloud.points.iter().find(|p| p.round != expected) {
            return Err(MapError::MismatchedFrame {
                index,
                expected,
                found: p.round,
            });
        }
    }

    let r = rounds.len();
    let grids: Vec<VoxelGrid> = rounds
        .iter()
        .map(|c| VoxelGrid::build(&c.points, eps_d))
        .collect();

    let mut kept = Vec::new();
    for (j, cloud) in rounds.iter().enumerate() {
        for p in &cloud.points {
            let mut support = 1usize; // own round
            for i in 0..r {
                if i == j {
                    continue;
                }
                if grids[i].any_within(&rounds[i].points, &p.position, eps_d) {
                    support += 1;
                }
            }
            if support as f64 / r as f64 >= delta {
                kept.push(*p);
            }
        }
    }
    Ok(SemanticPointCloud::new(kept))
}

/// Result of [`filter_road_points`]: the surviving cloud plus the number of
/// points dropped for degenerate (collinear/coincident) neighborhoods.
#[derive(Debug)]
pub struct RoadFilterOutcome {
    pub cloud: SemanticPointCloud,
    pub degenerate_dropped: usize,
}

/// Keeps points whose estimated surface normal is within
/// `max_normal_tilt_deg` of vertical, or whose label is a road-surface class
/// (road, sidewalk). Normals come from a plane fit over the
/// [`NORMAL_NEIGHBORS`] nearest neighbors.
pub fn filter_road_points(
    cloud: &SemanticPointCloud,
    max_normal_tilt_deg: f64,
) -> Result<RoadFilterOutcome, MapError> {
    if cloud.is_empty() {
        return Err(MapError::InvalidParameter("empty cloud".into()));
    }
    if !(max_normal_tilt_deg > 0.0 && max_normal_tilt_deg <= 90.0) {
        return Err(MapError::InvalidParameter(format!(
            "tilt must be in (0, 90], got {max_normal_tilt_deg}"
        )));
    }
    let cos_tilt = max_normal_tilt_deg.to_radians().cos();
    let mut kept = Vec::new();
    let mut degenerate = 0usize;
    for p in &cloud.points {
        if p.class_id == class_id::ROAD || p.class_id == class_id::SIDEWALK {
            kept.push(*p);
            continue;
        }
        match vertical_normal_cos(cloud, &p.position) {
            Some(nz) => {
                if nz >= cos_tilt {
                    kept.push(*p);
                }
            }
            None => degenerate += 1,
        }
    }
    Ok(RoadFilterOutcome {
        cloud: SemanticPointCloud::new(kept),
        degenerate_dropped: degenerate,
    })
}

/// |z component| of the plane-fit normal at `center`, or `None` when the
/// neighborhood is degenerate.
fn vertical_normal_cos(cloud: &SemanticPointCloud, center: &Vector3<f64>) -> Option<f64> {
    let neighbors = cloud.knn_indices(center, NORMAL_NEIGHBORS);
    if neighbors.len() < 3 {
        return None;
    }
    let mut mean = Vector3::zeros();
    for &i in &neighbors {
        mean += cloud.points[i].position;
    }
    mean /= neighbors.len() as f64;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for &i in &neighbors {
        let d = cloud.points[i].position - mean;
        cov += d * d.transpose();
    }
    cov /= neighbors.len() as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues")
    });
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    // coincident or collinear neighborhoods have no well-defined plane
    if l2 <= 1e-18 || l1 <= 1e-9 * l2 {
        return None;
    }
    let _ = l0;
    let normal = eig.eigenvectors.column(order[0]);
    Some(normal.z.abs())
}
