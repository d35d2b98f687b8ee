//! Deterministic synthetic scene generation.
//!
//! A scene spec lists geometric primitives (ground-plane rectangles, boxes,
//! vertical cylinders) with classes and optional per-round transient
//! placement, plus a camera trajectory. Generation samples every primitive
//! surface on a stratified jittered grid, producing per-round point clouds,
//! exact ground-truth poses, and per-point provenance (source primitive and
//! transient flag) so every downstream filter has an exact oracle.
//!
//! Spec file format: `key = value` lines with `#` comments. Repeated
//! `plane` / `box` / `cylinder` lines accumulate; a trailing `@r1,r2`
//! restricts a primitive to specific rounds and `step=S` overrides the
//! sampling step.
//!
//! ```text
//! seed = 7
//! rounds = 6
//! surface_step = 0.35
//! plane = 9 0 -4 100 8 0 step=0.2     # class x0 y0 len_x len_y z
//! box = 20 15 10.5 0 12 5 9           # class cx cy zbase sx sy sz
//! box = 1 45 -1 0 4.2 1.8 1.5 @2      # transient, present in round 2 only
//! cylinder = 15 12 5 0 0.15 6 step=0.1
//! trajectory = 3 0 1.6 ; 97 0 1.6
//! speed = 5
//! frame_rate = 2
//! camera = 256 256 152 128 304 256
//! ```

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CameraModel, CameraPose, PoseRecord};
use crate::map::{SemanticPoint, SemanticPointCloud};

/// Jitter amplitude as a fraction of the grid cell.
const JITTER_FRACTION: f64 = 0.35;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("invalid scene spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Axis-aligned rectangle in the z = `z` plane.
    Plane {
        x0: f64,
        y0: f64,
        len_x: f64,
        len_y: f64,
        z: f64,
    },
    /// Axis-aligned box; the bottom face is not sampled.
    Box {
        cx: f64,
        cy: f64,
        z_base: f64,
        sx: f64,
        sy: f64,
        sz: f64,
    },
    /// Vertical cylinder sampled on its lateral surface.
    Cylinder {
        cx: f64,
        cy: f64,
        z_base: f64,
        radius: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub class_id: u16,
    pub shape: Shape,
    /// Sampling step override; the spec's `surface_step` otherwise.
    pub step: Option<f64>,
    /// Rounds this primitive appears in; `None` means every round (static).
    pub rounds: Option<Vec<u16>>,
}

impl Primitive {
    pub fn is_transient(&self) -> bool {
        self.rounds.is_some()
    }

    fn present_in(&self, round: u16) -> bool {
        self.rounds.as_ref().map_or(true, |r| r.contains(&round))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub rounds: u16,
    pub surface_step: f64,
    pub primitives: Vec<Primitive>,
    pub trajectory: Vec<Vector3<f64>>,
    pub speed: f64,
    pub frame_rate: f64,
    pub camera: CameraModel,
}

/// Provenance of one generated point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointOrigin {
    /// Index into [`SceneSpec::primitives`].
    pub primitive: u32,
    pub transient: bool,
}

/// Everything a generated scene knows about itself.
#[derive(Debug)]
pub struct GeneratedScene {
    pub rounds: Vec<SemanticPointCloud>,
    /// Per-round provenance, aligned with each round's points.
    pub membership: Vec<Vec<PointOrigin>>,
    pub poses: Vec<PoseRecord>,
    pub camera: CameraModel,
    /// Frame period in seconds.
    pub dt: f64,
}

impl SceneSpec {
    /// Parses the `key = value` config format.
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut seed = 0u64;
        let mut rounds = 1u16;
        let mut surface_step = 0.35f64;
        let mut primitives = Vec::new();
        let mut trajectory = Vec::new();
        let mut speed = 5.0f64;
        let mut frame_rate = 2.0f64;
        let mut camera: Option<CameraModel> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| SceneError::Parse {
                line: line_no,
                msg: "expected `key = value`".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_err = |msg: String| SceneError::Parse { line: line_no, msg };
            match key {
                "seed" => seed = value.parse().map_err(|e| parse_err(format!("bad seed: {e}")))?,
                "rounds" => {
                    rounds = value
                        .parse()
                        .map_err(|e| parse_err(format!("bad rounds: {e}")))?
                }
                "surface_step" => {
                    surface_step = value
                        .parse()
                        .map_err(|e| parse_err(format!("bad surface_step: {e}")))?
                }
                "speed" => {
                    speed = value
                        .parse()
                        .map_err(|e| parse_err(format!("bad speed: {e}")))?
                }
                "frame_rate" => {
                    frame_rate = value
                        .parse()
                        .map_err(|e| parse_err(format!("bad frame_rate: {e}")))?
                }
                "camera" => {
                    let v = parse_floats(value, 6, line_no)?;
                    camera = Some(
                        CameraModel::new(v[0], v[1], v[2], v[3], v[4] as u32, v[5] as u32)
                            .map_err(|e| parse_err(e.to_string()))?,
                    );
                }
                "trajectory" => {
                    for wp in value.split(';') {
                        let v = parse_floats(wp.trim(), 3, line_no)?;
                        trajectory.push(Vector3::new(v[0], v[1], v[2]));
                    }
                }
                "plane" | "box" | "cylinder" => {
                    primitives.push(parse_primitive(key, value, line_no)?);
                }
                other => {
                    return Err(parse_err(format!("unknown key {other:?}")));
                }
            }
        }
        let spec = Self {
            seed,
            rounds,
            surface_step,
            primitives,
            trajectory,
            speed,
            frame_rate,
            camera: camera.unwrap_or(
                CameraModel::new(256.0, 256.0, 152.0, 128.0, 304, 256)
                    .expect("default camera is valid"),
            ),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The built-in test scene: a straight road with sidewalks, buildings
    /// on both sides, poles/lights/signs, two parked cars, and a car plus a
    /// bus that appear only in round 2.
    pub fn standard() -> Self {
        Self::parse(STANDARD_SCENE_CFG).expect("built-in scene config parses")
    }

    fn validate(&self) -> Result<(), SceneError> {
        if self.rounds == 0 {
            return Err(SceneError::Invalid("rounds must be >= 1".into()));
        }
        if !(self.surface_step > 0.0) {
            return Err(SceneError::Invalid("surface_step must be positive".into()));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some(step) = prim.step {
                if !(step > 0.0) {
                    return Err(SceneError::Invalid(format!(
                        "primitive {i} has non-positive step"
                    )));
                }
            }
            if let Some(rounds) = &prim.rounds {
                if rounds.iter().any(|&r| r >= self.rounds) {
                    return Err(SceneError::Invalid(format!(
                        "primitive {i} appears in a round >= {}",
                        self.rounds
                    )));
                }
            }
        }
        if self.trajectory.len() < 2 {
            return Err(SceneError::DegenerateTrajectory(
                "need at least two waypoints".into(),
            ));
        }
        if !(self.speed > 0.0) || !(self.frame_rate > 0.0) {
            return Err(SceneError::DegenerateTrajectory(
                "speed and frame_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn parse_floats(s: &str, n: usize, line: usize) -> Result<Vec<f64>, SceneError> {
    let vals: Result<Vec<f64>, _> = s.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == n => Ok(v),
        Ok(v) => Err(SceneError::Parse {
            line,
            msg: format!("expected {n} numbers, got {}", v.len()),
        }),
        Err(e) => Err(SceneError::Parse {
            line,
            msg: format!("bad number: {e}"),
        }),
    }
}

fn parse_primitive(kind: &str, value: &str, line: usize) -> Result<Primitive, SceneError> {
    let mut numbers = Vec::new();
    let mut step = None;
    let mut rounds = None;
    for token in value.split_whitespace() {
        if let Some(s) = token.strip_prefix("step=") {
            step = Some(s.parse().map_err(|e| SceneError::Parse {
                line,
                msg: format!("bad step: {e}"),
            })?);
        } else if let Some(r) = token.strip_prefix('@') {
            let parsed: Result<Vec<u16>, _> = r.split(',').map(str::parse).collect();
            rounds = Some(parsed.map_err(|e| SceneError::Parse {
                line,
                msg: format!("bad round list: {e}"),
            })?);
        } else {
            numbers.push(token.parse::<f64>().map_err(|e| SceneError::Parse {
                line,
                msg: format!("bad number {token:?}: {e}"),
            })?);
        }
    }
    let expect = match kind {
        "plane" => 6,
        "box" => 7,
        "cylinder" => 6,
        _ => unreachable!(),
    };
    if numbers.len() != expect {
        return Err(SceneError::Parse {
            line,
            msg: format!("{kind} expects {expect} numbers, got {}", numbers.len()),
        });
    }
    let class_id = numbers[0] as u16;
    let shape = match kind {
        "plane" => Shape::Plane {
            x0: numbers[1],
            y0: numbers[2],
            len_x: numbers[3],
            len_y: numbers[4],
            z: numbers[5],
        },
        "box" => Shape::Box {
            cx: numbers[1],
            cy: numbers[2],
            z_base: numbers[3],
            sx: numbers[4],
            sy: numbers[5],
            sz: numbers[6],
        },
        "cylinder" => Shape::Cylinder {
            cx: numbers[1],
            cy: numbers[2],
            z_base: numbers[3],
            radius: numbers[4],
            height: numbers[5],
        },
        _ => unreachable!(),
    };
    Ok(Primitive {
        class_id,
        shape,
        step,
        rounds,
    })
}

/// Generates the scene: per-round clouds, provenance, and ground-truth poses.
pub fn generate(spec: &SceneSpec) -> Result<GeneratedScene, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // sample each primitive once; transient primitives reuse the same
    // samples in each round they appear in
    let mut sampled: Vec<Vec<SemanticPoint>> = Vec::with_capacity(spec.primitives.len());
    for prim in &spec.primitives {
        let step = prim.step.unwrap_or(spec.surface_step);
        sampled.push(sample_primitive(prim, step, &mut rng));
    }
    let mut rounds = Vec::with_capacity(spec.rounds as usize);
    let mut membership = Vec::with_capacity(spec.rounds as usize);
    for round in 0..spec.rounds {
        let mut points = Vec::new();
        let mut origins = Vec::new();
        for (pi, prim) in spec.primitives.iter().enumerate() {
            if !prim.present_in(round) {
                continue;
            }
            for p in &sampled[pi] {
                points.push(SemanticPoint { round, ..*p });
                origins.push(PointOrigin {
                    primitive: pi as u32,
                    transient: prim.is_transient(),
                });
            }
        }
        rounds.push(SemanticPointCloud::new(points));
        membership.push(origins);
    }
    let poses = trajectory_poses(&spec.trajectory, spec.speed, spec.frame_rate)?;
    Ok(GeneratedScene {
        rounds,
        membership,
        poses,
        camera: spec.camera,
        dt: 1.0 / spec.frame_rate,
    })
}

fn sample_primitive(prim: &Primitive, step: f64, rng: &mut ChaCha8Rng) -> Vec<SemanticPoint> {
    let mut out = Vec::new();
    let mut emit = |pos: Vector3<f64>, rng: &mut ChaCha8Rng| {
        out.push(SemanticPoint::new(
            pos,
            prim.class_id,
            rng.random_range(0.05..1.0),
            0,
        ));
    };
    match prim.shape {
        Shape::Plane {
            x0,
            y0,
            len_x,
            len_y,
            z,
        } => {
            sample_rect(rng, x0, y0, len_x, len_y, step, |rng, x, y| {
                emit(Vector3::new(x, y, z), rng)
            });
        }
        Shape::Box {
            cx,
            cy,
            z_base,
            sx,
            sy,
            sz,
        } => {
            let (hx, hy) = (sx / 2.0, sy / 2.0);
            // top face
            sample_rect(rng, cx - hx, cy - hy, sx, sy, step, |rng, x, y| {
                emit(Vector3::new(x, y, z_base + sz), rng)
            });
            // x-normal sides
            for x in [cx - hx, cx + hx] {
                sample_rect(rng, cy - hy, z_base, sy, sz, step, |rng, y, z| {
                    emit(Vector3::new(x, y, z), rng)
                });
            }
            // y-normal sides
            for y in [cy - hy, cy + hy] {
                sample_rect(rng, cx - hx, z_base, sx, sz, step, |rng, x, z| {
                    emit(Vector3::new(x, y, z), rng)
                });
            }
        }
        Shape::Cylinder {
            cx,
            cy,
            z_base,
            radius,
            height,
        } => {
            let circumference = 2.0 * std::f64::consts::PI * radius;
            let n_ang = ((circumference / step).ceil() as usize).max(3);
            let n_z = ((height / step).ceil() as usize).max(2);
            let dz = height / n_z as f64;
            for iz in 0..n_z {
                for ia in 0..n_ang {
                    let jitter_a = rng.random_range(-JITTER_FRACTION..JITTER_FRACTION);
                    let jitter_z = rng.random_range(-JITTER_FRACTION..JITTER_FRACTION);
                    let angle =
                        (ia as f64 + 0.5 + jitter_a) / n_ang as f64 * 2.0 * std::f64::consts::PI;
                    let z = z_base + (iz as f64 + 0.5 + jitter_z) * dz;
                    emit(
                        Vector3::new(
                            cx + radius * angle.cos(),
                            cy + radius * angle.sin(),
                            z,
                        ),
                        rng,
                    );
                }
            }
        }
    }
    out
}

/// Stratified jittered sampling of an axis-aligned rectangle `[a0, a0+la] ×
/// [b0, b0+lb]`; the callback receives the two in-plane coordinates.
fn sample_rect(
    rng: &mut ChaCha8Rng,
    a0: f64,
    b0: f64,
    la: f64,
    lb: f64,
    step: f64,
    mut emit: impl FnMut(&mut ChaCha8Rng, f64, f64),
) {
    let na = ((la / step).ceil() as usize).max(1);
    let nb = ((lb / step).ceil() as usize).max(1);
    let da = la / na as f64;
    let db = lb / nb as f64;
    for ia in 0..na {
        for ib in 0..nb {
            let ja = rng.random_range(-JITTER_FRACTION..JITTER_FRACTION);
            let jb = rng.random_range(-JITTER_FRACTION..JITTER_FRACTION);
            let a = a0 + (ia as f64 + 0.5 + ja) * da;
            let b = b0 + (ib as f64 + 0.5 + jb) * db;
            emit(rng, a, b);
        }
    }
}

/// Frames along the waypoint polyline at `speed / frame_rate` spacing; the
/// camera looks along the travel direction with image-y pointing down.
fn trajectory_poses(
    waypoints: &[Vector3<f64>],
    speed: f64,
    frame_rate: f64,
) -> Result<Vec<PoseRecord>, SceneError> {
    if waypoints.len() < 2 {
        return Err(SceneError::DegenerateTrajectory(
            "need at least two waypoints".into(),
        ));
    }
    let mut cumulative = vec![0.0f64];
    for w in waypoints.windows(2) {
        let len = (w[1] - w[0]).norm();
        if len <= 1e-9 {
            return Err(SceneError::DegenerateTrajectory(
                "zero-length trajectory segment".into(),
            ));
        }
        cumulative.push(cumulative.last().unwrap() + len);
    }
    let total = *cumulative.last().unwrap();
    let spacing = speed / frame_rate;
    let mut poses = Vec::new();
    let mut frame = 0u64;
    let mut s = 0.0;
    while s <= total + 1e-9 {
        let s_clamped = s.min(total);
        // locate the segment containing s
        let mut seg = 0;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] <= s_clamped {
            seg += 1;
        }
        let t = (s_clamped - cumulative[seg]) / (cumulative[seg + 1] - cumulative[seg]);
        let position = waypoints[seg] + (waypoints[seg + 1] - waypoints[seg]) * t;
        let forward = (waypoints[seg + 1] - waypoints[seg]).normalize();
        let up = Vector3::z();
        let right = forward.cross(&up);
        if right.norm() <= 1e-9 {
            return Err(SceneError::DegenerateTrajectory(
                "vertical trajectory segment".into(),
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right).normalize();
        let rot = Matrix3::from_columns(&[right, down, forward]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        poses.push(PoseRecord {
            frame_id: frame,
            pose: CameraPose::new(q, position),
        });
        frame += 1;
        s += spacing;
    }
    Ok(poses)
}

/// Built-in test scene configuration.
pub const STANDARD_SCENE_CFG: &str = "\
# straight road scene: 6 rounds, transients in round 2 only
seed = 20406
rounds = 6
surface_step = 0.35
# road and sidewalks
plane = 9 0 -4 100 8 0 step=0.2
plane = 10 0 4 100 2 0 step=0.3
plane = 10 0 -6 100 2 0 step=0.3
# buildings, both sides
box = 20 15 10.5 0 12 5 9
box = 20 40 10.5 0 12 5 8
box = 20 65 10.5 0 12 5 10
box = 20 90 10.5 0 12 5 9
box = 20 15 -10.5 0 12 5 8
box = 20 42 -10.5 0 12 5 9
box = 20 68 -10.5 0 12 5 10
box = 20 92 -10.5 0 12 5 9
# poles with lights and signs
cylinder = 15 12 5 0 0.15 6 step=0.1
cylinder = 15 30 -5 0 0.15 6 step=0.1
cylinder = 15 48 5 0 0.15 6 step=0.1
cylinder = 15 66 -5 0 0.15 6 step=0.1
cylinder = 15 84 5 0 0.15 6 step=0.1
box = 14 12 5 5.6 0.8 0.3 1.2 step=0.08
box = 14 48 5 5.6 0.8 0.3 1.2 step=0.08
box = 16 30 -5 4.5 0.9 0.1 0.9 step=0.08
box = 16 66 -5 4.5 0.9 0.1 0.9 step=0.08
# parked cars (static movables)
box = 1 25 -3.1 0 4.2 1.8 1.5 step=0.15
box = 1 55 3.1 0 4.2 1.8 1.5 step=0.15
# transients: a car and a bus present only in round 2
box = 1 45 -1 0 4.2 1.8 1.5 step=0.15 @2
box = 7 70 1 0 10 2.5 3 step=0.15 @2
trajectory = 3 0 1.6 ; 97 0 1.6
speed = 5
frame_rate = 2
camera = 256 256 152 128 304 256
";
