//! SE(3) camera poses, pinhole projection, and pose-error metrics.
//!
//! Conventions used throughout the crate:
//!
//! - A [`CameraPose`] stores the camera-to-world rotation `q` and the camera
//!   center `t` in world coordinates, so a world point projects via
//!   `x_cam = R(q)^T (x - t)`.
//! - Quaternions are kept unit-norm and canonicalized to `w >= 0`
//!   (`q` and `-q` encode the same rotation).
//! - Image coordinates follow the raster convention: `u` grows right,
//!   `v` grows down, pixel `(0, 0)` is top-left.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Points closer than this along the optical axis do not project (meters).
pub const NEAR_PLANE_M: f64 = 0.1;

/// A 6-DoF camera pose: unit quaternion plus camera center in world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    q: UnitQuaternion<f64>,
    t: Vector3<f64>,
}

impl CameraPose {
    /// Builds a pose from a rotation and camera center, canonicalizing the
    /// quaternion (`w >= 0`).
    pub fn new(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self { q, t }.canonicalized()
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`; the
    /// quaternion is normalized before use. Already-unit quaternions pass
    /// through bit-exact so file round trips are lossless.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, t: Vector3<f64>) -> Self {
        let q = Quaternion::new(w, x, y, z);
        Self {
            q: UnitQuaternion::new_unchecked(q),
            t,
        }
        .canonicalized()
    }

    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
            t: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    /// Re-normalizes the quaternion and flips its sign so that `w >= 0`.
    pub fn canonicalized(&self) -> Self {
        let mut inner = self.q.into_inner();
        let norm = inner.norm();
        if (norm - 1.0).abs() > 1e-12 && norm > 0.0 {
            inner /= norm;
        }
        if inner.w < 0.0 {
            inner = -inner;
        }
        Self {
            q: UnitQuaternion::new_unchecked(inner),
            t: self.t,
        }
    }

    /// World-to-camera transform of a world point.
    #[inline]
    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse_transform_vector(&(x - self.t))
    }

    /// Camera-to-world transform of a camera-frame point.
    #[inline]
    pub fn camera_to_world(&self, x_cam: &Vector3<f64>) -> Vector3<f64> {
        self.q.transform_vector(x_cam) + self.t
    }
}

impl fmt::Display for CameraPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.q.quaternion();
        write!(
            f,
            "t=({}, {}, {}) q=({}, {}, {}, {})",
            self.t.x, self.t.y, self.t.z, q.w, q.i, q.j, q.k
        )
    }
}

/// A relative pose correction `(q̂, t̂)` applied onto a coarse pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    q: UnitQuaternion<f64>,
    t: Vector3<f64>,
}

impl RelativePose {
    pub fn new(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self { q, t }
    }

    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
            t: Vector3::zeros(),
        }
    }

    /// The correction that undoes `self`.
    pub fn inverse(&self) -> Self {
        Self {
            q: self.q.inverse(),
            t: -self.t,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }
}

/// Pinhole intrinsics plus raster size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} raster"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Length of the image diagonal in pixels.
    #[inline]
    pub fn diagonal_px(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// A successful projection: continuous pixel coordinates plus depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// The raster pixel this projection falls into.
    #[inline]
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

/// Projects a world point through `pose` into `cam`.
///
/// Returns `None` when the point lies behind the near plane or outside the
/// raster; out-of-view is a normal absent result, not an error.
#[inline]
pub fn project(x: &Vector3<f64>, pose: &CameraPose, cam: &CameraModel) -> Option<Projection> {
    let x_cam = pose.world_to_camera(x);
    if !(x_cam.z > NEAR_PLANE_M) {
        return None;
    }
    let inv_z = 1.0 / x_cam.z;
    let u = cam.fx * x_cam.x * inv_z + cam.cx;
    let v = cam.fy * x_cam.y * inv_z + cam.cy;
    if !cam.contains(u, v) {
        return None;
    }
    Some(Projection {
        u,
        v,
        depth: x_cam.z,
    })
}

/// Applies a relative-pose correction: `q = q̂ ⊗ q_coarse`, `t = t_coarse + t̂`.
///
/// The rotation correction pre-multiplies (a world-frame group action) and the
/// translation adds in the world frame; the result is canonicalized.
pub fn compose_correction(coarse: &CameraPose, delta: &RelativePose) -> CameraPose {
    CameraPose::new(delta.q * coarse.q, coarse.t + delta.t)
}

/// Relative rotation angle between two poses, in degrees.
///
/// Computed as `2·arccos(min(1, |q_a · q_b|))·180/π`; symmetric and in
/// `[0, 180]`.
pub fn rotation_angle_deg(a: &CameraPose, b: &CameraPose) -> f64 {
    let qa = a.q.quaternion();
    let qb = b.q.quaternion();
    let dot = (qa.w * qb.w + qa.i * qb.i + qa.j * qb.j + qa.k * qb.k).abs();
    2.0 * dot.min(1.0).acos().to_degrees()
}

/// One line of a pose file: frame id plus pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub frame_id: u64,
    pub pose: CameraPose,
}

#[derive(Debug, thiserror::Error)]
pub enum PoseFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("pose file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Reads a pose file: one `frame_id tx ty tz qw qx qy qz` record per line,
/// whitespace separated; `#` starts a comment.
pub fn read_pose_file(path: &Path) -> Result<Vec<PoseRecord>, PoseFileError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(PoseFileError::Parse {
                line: line_no,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let frame_id: u64 = fields[0].parse().map_err(|e| PoseFileError::Parse {
            line: line_no,
            msg: format!("bad frame id: {e}"),
        })?;
        let mut vals = [0.0f64; 7];
        for (i, f) in fields[1..].iter().enumerate() {
            vals[i] = f.parse().map_err(|e| PoseFileError::Parse {
                line: line_no,
                msg: format!("bad float {f:?}: {e}"),
            })?;
        }
        let t = Vector3::new(vals[0], vals[1], vals[2]);
        let norm =
            (vals[3] * vals[3] + vals[4] * vals[4] + vals[5] * vals[5] + vals[6] * vals[6]).sqrt();
        if !(norm > 1e-12) {
            return Err(PoseFileError::Parse {
                line: line_no,
                msg: "zero-norm quaternion".to_string(),
            });
        }
        records.push(PoseRecord {
            frame_id,
            pose: CameraPose::from_wxyz(vals[3], vals[4], vals[5], vals[6], t),
        });
    }
    Ok(records)
}

/// Writes a pose file in the format accepted by [`read_pose_file`].
pub fn write_pose_file(path: &Path, records: &[PoseRecord]) -> Result<(), PoseFileError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# frame_id tx ty tz qw qx qy qz")?;
    for rec in records {
        let t = rec.pose.translation();
        let q = rec.pose.rotation().quaternion();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            rec.frame_id, t.x, t.y, t.z, q.w, q.i, q.j, q.k
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        let q = if axis.norm() > 1e-6 {
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        } else {
            UnitQuaternion::identity()
        };
        let t = Vector3::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
        );
        CameraPose::new(q, t)
    }

    /// Independent projection oracle: explicit quaternion-to-matrix formula
    /// and a 4x4 homogeneous pipeline.
    fn project_matrix_oracle(
        x: &Vector3<f64>,
        pose: &CameraPose,
        cam: &CameraModel,
    ) -> Option<(f64, f64, f64)> {
        let q = pose.rotation().quaternion();
        let (w, qx, qy, qz) = (q.w, q.i, q.j, q.k);
        // camera-to-world rotation, written out from the quaternion
        let r = [
            [
                1.0 - 2.0 * (qy * qy + qz * qz),
                2.0 * (qx * qy - w * qz),
                2.0 * (qx * qz + w * qy),
            ],
            [
                2.0 * (qx * qy + w * qz),
                1.0 - 2.0 * (qx * qx + qz * qz),
                2.0 * (qy * qz - w * qx),
            ],
            [
                2.0 * (qx * qz - w * qy),
                2.0 * (qy * qz + w * qx),
                1.0 - 2.0 * (qx * qx + qy * qy),
            ],
        ];
        let t = pose.translation();
        // world-to-camera 4x4: [R^T | -R^T t]
        let mut m = [[0.0f64; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[j][i];
            }
            m[i][3] = -(r[0][i] * t.x + r[1][i] * t.y + r[2][i] * t.z);
        }
        m[3][3] = 1.0;
        let xh = [x.x, x.y, x.z, 1.0];
        let mut xc = [0.0f64; 4];
        for i in 0..4 {
            for j in 0..4 {
                xc[i] += m[i][j] * xh[j];
            }
        }
        if !(xc[2] > NEAR_PLANE_M) {
            return None;
        }
        let u = cam.fx * xc[0] / xc[2] + cam.cx;
        let v = cam.fy * xc[1] / xc[2] + cam.cy;
        if !cam.contains(u, v) {
            return None;
        }
        Some((u, v, xc[2]))
    }

    #[test]
    fn optical_axis_point_hits_principal_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let x = pose.camera_to_world(&Vector3::new(0.0, 0.0, 5.0));
            let p = project(&x, &pose, &test_cam()).expect("visible");
            assert_relative_eq!(p.u, 50.0, epsilon = 1e-9);
            assert_relative_eq!(p.v, 50.0, epsilon = 1e-9);
            assert_relative_eq!(p.depth, 5.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn identity_pose_projection() {
        let p = project(
            &Vector3::new(1.0, 0.0, 10.0),
            &CameraPose::identity(),
            &test_cam(),
        )
        .expect("visible");
        assert_relative_eq!(p.u, 60.0, epsilon = 1e-12);
        assert_relative_eq!(p.v, 50.0, epsilon = 1e-12);
        assert_relative_eq!(p.depth, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_near_plane_and_out_of_view_are_none() {
        let cam = test_cam();
        let pose = CameraPose::identity();
        assert!(project(&Vector3::new(0.0, 0.0, 0.05), &pose, &cam).is_none());
        assert!(project(&Vector3::new(0.0, 0.0, -5.0), &pose, &cam).is_none());
        // u = 100 * (6/10) + 50 = 110 >= width
        assert!(project(&Vector3::new(6.0, 0.0, 10.0), &pose, &cam).is_none());
    }

    #[test]
    fn projection_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cam = test_cam();
        let mut checked = 0;
        for _ in 0..500 {
            let pose = random_pose(&mut rng);
            let x = Vector3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
            );
            if let Some(p) = project(&x, &pose, &cam) {
                let (u, v, d) = project_matrix_oracle(&x, &pose, &cam).expect("oracle agrees");
                assert_relative_eq!(p.u, u, epsilon = 1e-9);
                assert_relative_eq!(p.v, v, epsilon = 1e-9);
                assert_relative_eq!(p.depth, d, epsilon = 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 30, "too few visible samples: {checked}");
    }

    #[test]
    fn compose_identity_is_canonicalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let coarse = random_pose(&mut rng);
            let out = compose_correction(&coarse, &RelativePose::identity());
            let canon = coarse.canonicalized();
            assert_eq!(out.rotation().quaternion(), canon.rotation().quaternion());
            assert_eq!(out.translation(), canon.translation());
        }
    }

    #[test]
    fn compose_onto_identity_yields_delta() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.4);
        let t = Vector3::new(1.0, -2.0, 3.0);
        let out = compose_correction(&CameraPose::identity(), &RelativePose::new(q, t));
        assert_relative_eq!(
            out.rotation().quaternion().coords,
            q.quaternion().coords,
            epsilon = 1e-15
        );
        assert_eq!(out.translation(), &t);
    }

    #[test]
    fn compose_round_trips_with_inverse_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let coarse = random_pose(&mut rng);
            let delta = RelativePose::new(
                *random_pose(&mut rng).rotation(),
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
            );
            let forward = compose_correction(&coarse, &delta);
            let back = compose_correction(&forward, &delta.inverse());
            let canon = coarse.canonicalized();
            assert!((back.translation() - canon.translation()).norm() < 1e-9);
            let dq = back.rotation().quaternion().coords - canon.rotation().quaternion().coords;
            assert!(dq.norm() < 1e-9, "quaternion round-trip drift {}", dq.norm());
        }
    }

    #[test]
    fn rotation_angle_basics() {
        let a = CameraPose::identity();
        assert_eq!(rotation_angle_deg(&a, &a), 0.0);
        let b = CameraPose::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 90f64.to_radians()),
            Vector3::zeros(),
        );
        assert_relative_eq!(rotation_angle_deg(&a, &b), 90.0, epsilon = 1e-6);
    }

    #[test]
    fn rotation_angle_matches_trace_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let rel = a.rotation().inverse() * b.rotation();
            let tr = rel.to_rotation_matrix().matrix().trace();
            let oracle = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            assert_relative_eq!(rotation_angle_deg(&a, &b), oracle, epsilon = 1e-6);
        }
    }

    #[test]
    fn pose_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let records: Vec<PoseRecord> = (0..20)
            .map(|i| PoseRecord {
                frame_id: i,
                pose: random_pose(&mut rng),
            })
            .collect();
        write_pose_file(&path, &records).unwrap();
        let loaded = read_pose_file(&path).unwrap();
        assert_eq!(records.len(), loaded.len());
        for (a, b) in records.iter().zip(loaded.iter()) {
            assert_eq!(a.frame_id, b.frame_id);
            assert_eq!(a.pose.translation(), b.pose.translation());
            assert_eq!(
                a.pose.rotation().quaternion().coords,
                b.pose.rotation().quaternion().coords
            );
        }
    }

    #[test]
    fn pose_file_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "0 1 2 3 1 0 0\n").unwrap();
        assert!(matches!(
            read_pose_file(&path),
            Err(PoseFileError::Parse { line: 1, .. })
        ));
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
        )
            .prop_filter_map("near-zero quaternion", |(w, x, y, z)| {
                let q = Quaternion::new(w, x, y, z);
                (q.norm() > 1e-3).then(|| UnitQuaternion::from_quaternion(q))
            })
    }

    fn arb_vec(range: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn negated_quaternion_projects_identically(q in arb_quat(), t in arb_vec(10.0), x in arb_vec(30.0)) {
            let pose_a = CameraPose { q, t };
            let pose_b = CameraPose {
                q: UnitQuaternion::new_unchecked(-q.into_inner()),
                t,
            };
            let cam = test_cam();
            match (project(&x, &pose_a, &cam), project(&x, &pose_b, &cam)) {
                (Some(a), Some(b)) => {
                    prop_assert!((a.u - b.u).abs() < 1e-9);
                    prop_assert!((a.v - b.v).abs() < 1e-9);
                    prop_assert!((a.depth - b.depth).abs() < 1e-9);
                }
                (None, None) => {}
                _ => prop_assert!(false, "visibility disagrees for q and -q"),
            }
        }

        #[test]
        fn projection_invariant_under_rigid_motion(
            q in arb_quat(), t in arb_vec(10.0), x in arb_vec(30.0),
            gq in arb_quat(), gt in arb_vec(10.0),
        ) {
            let cam = test_cam();
            let pose = CameraPose::new(q, t);
            let moved_pose = CameraPose::new(gq * q, gq.transform_vector(&t) + gt);
            let moved_x = gq.transform_vector(&x) + gt;
            match (project(&x, &pose, &cam), project(&moved_x, &moved_pose, &cam)) {
                (Some(a), Some(b)) => {
                    prop_assert!((a.u - b.u).abs() < 1e-9, "u {} vs {}", a.u, b.u);
                    prop_assert!((a.v - b.v).abs() < 1e-9);
                    prop_assert!((a.depth - b.depth).abs() < 1e-9);
                }
                // allow disagreement only within float slop of the view boundary
                (Some(p), None) | (None, Some(p)) => {
                    let eps = 1e-9;
                    let near_edge = p.u < eps || p.u > cam.width as f64 - eps
                        || p.v < eps || p.v > cam.height as f64 - eps
                        || (p.depth - NEAR_PLANE_M).abs() < eps;
                    prop_assert!(near_edge, "visibility flipped away from boundary");
                }
                (None, None) => {}
            }
        }

        #[test]
        fn rotation_angle_symmetric_and_triangle(
            qa in arb_quat(), qb in arb_quat(), qc in arb_quat(),
        ) {
            let zero = Vector3::zeros();
            let a = CameraPose::new(qa, zero);
            let b = CameraPose::new(qb, zero);
            let c = CameraPose::new(qc, zero);
            let ab = rotation_angle_deg(&a, &b);
            let ba = rotation_angle_deg(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0 && ab <= 180.0 + 1e-12);
            let ac = rotation_angle_deg(&a, &c);
            let bc = rotation_angle_deg(&b, &c);
            prop_assert!(ac <= ab + bc + 1e-6, "triangle inequality: {} > {} + {}", ac, ab, bc);
        }
    }
}
