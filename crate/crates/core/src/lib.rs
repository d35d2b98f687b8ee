//! Core library for turning a semantic 3D point-cloud map plus geo-tagged
//! camera trajectories into per-frame label/depth maps, rectifying and
//! refining noisy GPS/IMU poses against that map, and scoring the results.

mod bytesio;
pub mod geometry;
pub mod map;
pub mod fusion;
pub mod localize;
pub mod metrics;
pub mod render;
pub mod road;
pub mod scene;

pub use geometry::{
    compose_correction, project, rotation_angle_deg, CameraModel, CameraPose, Projection,
    RelativePose,
};
pub use map::{ClassRegistry, SemanticPoint, SemanticPointCloud, IGNORE_ID};
pub use render::{DepthMap, LabelMap, SplatConfig};
