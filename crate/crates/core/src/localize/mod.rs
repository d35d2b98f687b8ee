//! GPS/IMU noise simulation, the semantically weighted geometric pose loss,
//! gradient-based pose refinement, and the constant-velocity Kalman baseline.
//!
//! The loss for a candidate pose `p` against reference pose `p*` over a
//! visible point set `P` is
//!
//! ```text
//! L(p, p*) = Σ_{x ∈ P} ω_{l_x} · |π(x, p) − π(x, p*)|₂
//! ```
//!
//! with per-class weights `ω`. Points visible under `p*` but leaving the
//! frame under `p` contribute a constant penalty equal to the image diagonal
//! in pixels, which keeps the loss defined away from the basin.

mod kalman;
mod refine;

pub use kalman::{kalman_smooth, kalman_smooth_with_states, KalmanParams, KalmanState};
pub use refine::{refine_pose, RefineOptions, RefineOutcome, RenderedView};

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::UnitSphere;

use crate::geometry::{project, CameraModel, CameraPose, PoseRecord};
use crate::map::{class_id, SemanticPoint};
use crate::render::{DepthMap, LabelMap};

/// Default translation noise bound, meters.
pub const DEFAULT_TRANS_MAX_M: f64 = 7.5;
/// Default rotation noise bound, degrees.
pub const DEFAULT_ROT_MAX_DEG: f64 = 15.0;

#[derive(Debug, thiserror::Error)]
pub enum LocalizeError {
    #[error("no points of the reference view are visible")]
    EmptyVisibleSet,
    #[error("refinement diverged (non-finite loss after {iterations} iterations)")]
    Divergence { iterations: usize },
    #[error("non-finite value in input stream")]
    NonFiniteInput,
    #[error("pose stream length mismatch: {est} estimates vs {gt} ground truth")]
    LengthMismatch { est: usize, gt: usize },
    #[error("frame id mismatch at index {index}: {est} vs {gt}")]
    FrameIdMismatch { index: usize, est: u64, gt: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Uniform perturbation model for simulating noisy GPS/IMU poses:
/// translation offsets up to `trans_max` meters and rotations up to
/// `rot_max_deg` degrees.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    pub trans_max: f64,
    pub rot_max_deg: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(trans_max: f64, rot_max_deg: f64, seed: u64) -> Result<Self, LocalizeError> {
        if !(trans_max >= 0.0 && rot_max_deg >= 0.0) {
            return Err(LocalizeError::InvalidParameter(format!(
                "noise bounds must be non-negative, got {trans_max} m / {rot_max_deg} deg"
            )));
        }
        Ok(Self {
            trans_max,
            rot_max_deg,
            seed,
        })
    }

    /// A perturbation stream seeded from this model; identical seeds
    /// reproduce identical streams bit for bit.
    pub fn perturber(&self) -> PosePerturber {
        PosePerturber {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            trans_max: self.trans_max,
            rot_max_deg: self.rot_max_deg,
        }
    }

    /// Perturbs a single pose with a fresh stream (first draw of the seed).
    pub fn perturb_one(&self, pose: &CameraPose) -> CameraPose {
        self.perturber().perturb(pose)
    }

    /// Perturbs every pose with consecutive draws from one stream.
    pub fn perturb_stream(&self, poses: &[CameraPose]) -> Vec<CameraPose> {
        let mut p = self.perturber();
        poses.iter().map(|pose| p.perturb(pose)).collect()
    }
}

/// Sequential pose perturber; one draw consumes, in order, a translation
/// direction (uniform on the sphere), a magnitude `U(0, trans_max)`, a
/// rotation axis (uniform on the sphere), and an angle `U(0, rot_max)`.
pub struct PosePerturber {
    rng: ChaCha8Rng,
    trans_max: f64,
    rot_max_deg: f64,
}

impl PosePerturber {
    pub fn perturb(&mut self, pose: &CameraPose) -> CameraPose {
        let t_offset = if self.trans_max > 0.0 {
            let dir: [f64; 3] = self.rng.sample(UnitSphere);
            let mag = self.rng.random_range(0.0..self.trans_max);
            Vector3::new(dir[0], dir[1], dir[2]) * mag
        } else {
            Vector3::zeros()
        };
        let q = if self.rot_max_deg > 0.0 {
            let axis: [f64; 3] = self.rng.sample(UnitSphere);
            let angle = self.rng.random_range(0.0..self.rot_max_deg).to_radians();
            let axis = nalgebra::Unit::new_normalize(Vector3::new(axis[0], axis[1], axis[2]));
            nalgebra::UnitQuaternion::from_axis_angle(&axis, angle) * pose.rotation()
        } else {
            *pose.rotation()
        };
        CameraPose::new(q, pose.translation() + t_offset)
    }
}

/// Per-class weight table for the geometric loss; unlisted classes get the
/// default weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticWeightTable {
    weights: BTreeMap<u16, f64>,
    default_weight: f64,
}

impl SemanticWeightTable {
    /// Every class weighted 1.
    pub fn uniform() -> Self {
        Self {
            weights: BTreeMap::new(),
            default_weight: 1.0,
        }
    }

    /// Thin, pose-sensitive structures (traffic lights, poles, signs)
    /// weighted 2, everything else 1.
    pub fn standard() -> Self {
        let mut table = Self::uniform();
        for id in [
            class_id::TRAFFIC_LIGHT,
            class_id::POLE,
            class_id::TRAFFIC_SIGN,
        ] {
            table.weights.insert(id, 2.0);
        }
        table
    }

    pub fn set(&mut self, class: u16, weight: f64) -> Result<(), LocalizeError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(LocalizeError::InvalidParameter(format!(
                "weight for class {class} must be finite and >= 0, got {weight}"
            )));
        }
        self.weights.insert(class, weight);
        Ok(())
    }

    #[inline]
    pub fn weight(&self, class: u16) -> f64 {
        self.weights
            .get(&class)
            .copied()
            .unwrap_or(self.default_weight)
    }

    /// A copy with every weight (including the default) scaled.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .map(|(&c, &w)| (c, w * factor))
                .collect(),
            default_weight: self.default_weight * factor,
        }
    }

    /// Reads `class_id,weight` lines; an optional header row is skipped.
    pub fn read_csv(path: &Path) -> Result<Self, LocalizeError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut table = Self::uniform();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let body = line.trim();
            if body.is_empty() || (line_no == 1 && body.starts_with("class_id")) {
                continue;
            }
            let mut parts = body.split(',');
            let (Some(cls), Some(w), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(LocalizeError::Parse {
                    line: line_no,
                    msg: "expected `class_id,weight`".to_string(),
                });
            };
            let class: u16 = cls.trim().parse().map_err(|e| LocalizeError::Parse {
                line: line_no,
                msg: format!("bad class id: {e}"),
            })?;
            let weight: f64 = w.trim().parse().map_err(|e| LocalizeError::Parse {
                line: line_no,
                msg: format!("bad weight: {e}"),
            })?;
            table.set(class, weight).map_err(|e| LocalizeError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LocalizeError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "class_id,weight")?;
        for (class, weight) in &self.weights {
            writeln!(out, "{class},{weight}")?;
        }
        Ok(())
    }
}

/// Loss evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Total weighted loss in pixels.
    pub loss: f64,
    /// Points that left the view under the candidate pose.
    pub clamped: usize,
    /// Points visible under the reference pose (the scored set).
    pub evaluated: usize,
}

/// Weighted geometric matching loss between a candidate and reference pose.
pub fn pose_loss(
    pose: &CameraPose,
    reference: &CameraPose,
    points: &[SemanticPoint],
    cam: &CameraModel,
    weights: &SemanticWeightTable,
) -> Result<LossBreakdown, LocalizeError> {
    let penalty = cam.diagonal_px();
    let mut loss = 0.0;
    let mut clamped = 0usize;
    let mut evaluated = 0usize;
    for p in points {
        let Some(target) = project(&p.position, reference, cam) else {
            continue;
        };
        evaluated += 1;
        let w = weights.weight(p.class_id);
        match project(&p.position, pose, cam) {
            Some(proj) => {
                let du = proj.u - target.u;
                let dv = proj.v - target.v;
                loss += w * (du * du + dv * dv).sqrt();
            }
            None => {
                loss += w * penalty;
                clamped += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(LocalizeError::EmptyVisibleSet);
    }
    Ok(LossBreakdown {
        loss,
        clamped,
        evaluated,
    })
}

/// Gradient (and Gauss-Newton approximation) of [`pose_loss`] in the local
/// 6-DoF chart `[δt, δθ]` anchored at `pose`: the candidate moves as
/// `t + δt`, `exp(δθ) ⊗ q`. Out-of-view points contribute a constant and
/// carry no gradient.
pub(crate) fn loss_gradient_full(
    pose: &CameraPose,
    reference: &CameraPose,
    points: &[SemanticPoint],
    cam: &CameraModel,
    weights: &SemanticWeightTable,
) -> Result<(Vector6<f64>, Matrix6<f64>, LossBreakdown), LocalizeError> {
    let penalty = cam.diagonal_px();
    let rot = pose.rotation().to_rotation_matrix();
    let r_inv = rot.inverse().into_inner();
    let mut grad = Vector6::zeros();
    let mut hess = Matrix6::zeros();
    let mut loss = 0.0;
    let mut clamped = 0usize;
    let mut evaluated = 0usize;
    for p in points {
        let Some(target) = project(&p.position, reference, cam) else {
            continue;
        };
        evaluated += 1;
        let w = weights.weight(p.class_id);
        let Some(proj) = project(&p.position, pose, cam) else {
            loss += w * penalty;
            clamped += 1;
            continue;
        };
        let e = Vector2::new(proj.u - target.u, proj.v - target.v);
        let norm = e.norm();
        loss += w * norm;
        if norm < 1e-12 {
            continue;
        }
        let x_cam = pose.world_to_camera(&p.position);
        let inv_z = 1.0 / x_cam.z;
        // d(u,v)/d(x_cam)
        let a = Matrix2x3::new(
            cam.fx * inv_z,
            0.0,
            -cam.fx * x_cam.x * inv_z * inv_z,
            0.0,
            cam.fy * inv_z,
            -cam.fy * x_cam.y * inv_z * inv_z,
        );
        // d(x_cam)/d(δt) = -R^T ; d(x_cam)/d(δθ) = R^T [x - t]×
        let world_arm = p.position - pose.translation();
        let m_t = -r_inv;
        let m_r = r_inv * cross_matrix(&world_arm);
        let b_t = a * m_t;
        let b_r = a * m_r;
        let mut jac = nalgebra::Matrix2x6::zeros();
        jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&b_t);
        jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&b_r);
        let unit = e / norm;
        grad += w * jac.transpose() * unit;
        hess += (w / norm) * jac.transpose() * jac;
    }
    if evaluated == 0 {
        return Err(LocalizeError::EmptyVisibleSet);
    }
    Ok((
        grad,
        hess,
        LossBreakdown {
            loss,
            clamped,
            evaluated,
        },
    ))
}

/// Gradient of [`pose_loss`] in the local `[δt, δθ]` chart at `pose`.
pub fn loss_gradient(
    pose: &CameraPose,
    reference: &CameraPose,
    points: &[SemanticPoint],
    cam: &CameraModel,
    weights: &SemanticWeightTable,
) -> Result<(Vector6<f64>, LossBreakdown), LocalizeError> {
    loss_gradient_full(pose, reference, points, cam, weights)
        .map(|(g, _, breakdown)| (g, breakdown))
}

#[inline]
fn cross_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Moves a pose along the local chart: `t += δt`, `q ← exp(δθ) ⊗ q`.
pub fn apply_pose_increment(pose: &CameraPose, delta: &Vector6<f64>) -> CameraPose {
    let dt = Vector3::new(delta[0], delta[1], delta[2]);
    let dtheta = Vector3::new(delta[3], delta[4], delta[5]);
    CameraPose::new(
        nalgebra::UnitQuaternion::from_scaled_axis(dtheta) * pose.rotation(),
        pose.translation() + dt,
    )
}

/// Back-projects every covered pixel of a rendered view into a world point;
/// pixel centers un-project through `depth·K⁻¹·(u+½, v+½, 1)` and the class
/// comes from the label map.
pub fn back_project(
    depth: &DepthMap,
    label: &LabelMap,
    pose: &CameraPose,
    cam: &CameraModel,
) -> Vec<SemanticPoint> {
    assert_eq!(depth.width(), label.width());
    assert_eq!(depth.height(), label.height());
    let mut points = Vec::new();
    for py in 0..depth.height() {
        for px in 0..depth.width() {
            let d = depth.get(px, py);
            if !d.is_finite() {
                continue;
            }
            let u = f64::from(px) + 0.5;
            let v = f64::from(py) + 0.5;
            let x_cam = Vector3::new(
                d * (u - cam.cx) / cam.fx,
                d * (v - cam.cy) / cam.fy,
                d,
            );
            let world = pose.camera_to_world(&x_cam);
            points.push(SemanticPoint::new(world, label.get(px, py), 0.0, 0));
        }
    }
    points
}

/// Median translation and rotation offsets of an estimated pose stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseAccuracy {
    pub median_translation_m: f64,
    pub median_rotation_deg: f64,
}

/// Per-frame pose errors against ground truth; streams must align by frame
/// id. Even-length streams take the mean of the two middle values.
pub fn evaluate_pose_stream(
    estimates: &[PoseRecord],
    ground_truth: &[PoseRecord],
) -> Result<PoseAccuracy, LocalizeError> {
    if estimates.len() != ground_truth.len() {
        return Err(LocalizeError::LengthMismatch {
            est: estimates.len(),
            gt: ground_truth.len(),
        });
    }
    if estimates.is_empty() {
        return Err(LocalizeError::InvalidParameter("empty pose streams".into()));
    }
    let mut trans = Vec::with_capacity(estimates.len());
    let mut rot = Vec::with_capacity(estimates.len());
    for (index, (e, g)) in estimates.iter().zip(ground_truth.iter()).enumerate() {
        if e.frame_id != g.frame_id {
            return Err(LocalizeError::FrameIdMismatch {
                index,
                est: e.frame_id,
                gt: g.frame_id,
            });
        }
        trans.push((e.pose.translation() - g.pose.translation()).norm());
        rot.push(crate::geometry::rotation_angle_deg(&e.pose, &g.pose));
    }
    Ok(PoseAccuracy {
        median_translation_m: median(&mut trans),
        median_rotation_deg: median(&mut rot),
    })
}

/// Median of a slice; even counts average the two middle values.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
