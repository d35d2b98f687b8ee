//! Pose refinement by direct minimization of the geometric matching loss.
//!
//! The optimizer is a damped Gauss-Newton descent: the sum-of-norms loss is
//! locally modeled through IRLS weights `ω/|e|`, the step solves
//! `(H + λI) δ = -g` in the 6-DoF chart, and a short backtracking line
//! search plus Levenberg-style λ adaptation keeps every accepted step a
//! strict improvement. Multi-start (the coarse pose plus a few rotation
//! jitters) covers the shallow local minima that appear at large rotation
//! noise.

use nalgebra::Vector6;

use super::{
    apply_pose_increment, back_project, loss_gradient_full, pose_loss, LocalizeError, LossBreakdown,
    SemanticWeightTable,
};
use crate::geometry::{CameraModel, CameraPose};
use crate::map::SemanticPoint;
use crate::render::{DepthMap, LabelMap};

/// A rendered reference view: depth and label maps plus the pose they were
/// rendered at. Back-projecting the depth map reconstructs the visible
/// world points the loss is evaluated over.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub depth: DepthMap,
    pub label: LabelMap,
    pub pose: CameraPose,
}

impl RenderedView {
    pub fn new(depth: DepthMap, label: LabelMap, pose: CameraPose) -> Self {
        Self { depth, label, pose }
    }

    /// The visible point set, subsampled with a deterministic stride when
    /// larger than `max_points`.
    pub fn visible_points(&self, cam: &CameraModel, max_points: usize) -> Vec<SemanticPoint> {
        let all = back_project(&self.depth, &self.label, &self.pose, cam);
        if max_points == 0 || all.len() <= max_points {
            return all;
        }
        let stride = all.len().div_ceil(max_points);
        all.into_iter().step_by(stride).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub max_iterations: usize,
    /// Cap on the visible point set (stride-subsampled above this).
    pub max_points: usize,
    /// Extra rotation-jittered starts besides the coarse pose.
    pub rotation_jitters: usize,
    pub jitter_angle_deg: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
    /// Consecutive rejected proposal rounds before a start gives up.
    pub patience: usize,
    /// Infinity-norm gradient threshold for convergence.
    pub gradient_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iterations: 120,
            max_points: 1500,
            rotation_jitters: 4,
            jitter_angle_deg: 7.5,
            lambda_init: 1e-3,
            lambda_max: 1e8,
            patience: 8,
            gradient_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOutcome {
    pub pose: CameraPose,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Accepted descent steps summed over all starts.
    pub iterations: usize,
    /// Out-of-view points at the final pose.
    pub clamped: usize,
}

/// Refines a coarse pose against a rendered reference view.
///
/// Never returns a pose with higher loss than the input; an error is raised
/// only for an empty visible set or a non-finite loss.
pub fn refine_pose(
    coarse: &CameraPose,
    view: &RenderedView,
    cam: &CameraModel,
    weights: &SemanticWeightTable,
    opts: &RefineOptions,
) -> Result<RefineOutcome, LocalizeError> {
    let points = view.visible_points(cam, opts.max_points);
    if points.is_empty() {
        return Err(LocalizeError::EmptyVisibleSet);
    }
    let start_breakdown = pose_loss(coarse, &view.pose, &points, cam, weights)?;
    let mut best_pose = coarse.canonicalized();
    let mut best = start_breakdown;
    let mut iterations = 0usize;

    let perfect = 1e-9 * best.evaluated as f64;
    for start in starts(coarse, opts) {
        if best.loss <= perfect {
            break;
        }
        let (pose, breakdown, steps) =
            descend(&start, view, &points, cam, weights, opts, iterations)?;
        iterations = steps;
        if breakdown.loss < best.loss {
            best = breakdown;
            best_pose = pose;
        }
    }

    Ok(RefineOutcome {
        pose: best_pose,
        initial_loss: start_breakdown.loss,
        final_loss: best.loss,
        iterations,
        clamped: best.clamped,
    })
}

/// The multi-start set: the coarse pose first, then camera-frame rotation
/// jitters (pitch/yaw/roll, alternating signs, growing angle).
fn starts(coarse: &CameraPose, opts: &RefineOptions) -> Vec<CameraPose> {
    let mut out = vec![coarse.canonicalized()];
    let axes = [
        nalgebra::Vector3::x_axis(),
        nalgebra::Vector3::y_axis(),
        nalgebra::Vector3::z_axis(),
    ];
    for j in 0..opts.rotation_jitters {
        let axis = axes[(j / 2) % 3];
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let scale = 1.0 + (j / 6) as f64;
        let angle = sign * scale * opts.jitter_angle_deg.to_radians();
        // post-multiplied: the jitter tilts the camera in its own frame
        let q = coarse.rotation()
            * nalgebra::UnitQuaternion::from_axis_angle(&axis, angle);
        out.push(CameraPose::new(q, *coarse.translation()));
    }
    out
}

/// Damped Gauss-Newton descent from one start; returns the best pose found,
/// its loss breakdown, and the running accepted-step count.
fn descend(
    start: &CameraPose,
    view: &RenderedView,
    points: &[SemanticPoint],
    cam: &CameraModel,
    weights: &SemanticWeightTable,
    opts: &RefineOptions,
    mut iterations: usize,
) -> Result<(CameraPose, LossBreakdown, usize), LocalizeError> {
    let mut pose = *start;
    let mut breakdown = pose_loss(&pose, &view.pose, points, cam, weights)?;
    if !breakdown.loss.is_finite() {
        return Err(LocalizeError::Divergence { iterations });
    }
    let mut lambda = opts.lambda_init;
    for _ in 0..opts.max_iterations {
        let (grad, hess, _) = loss_gradient_full(&pose, &view.pose, points, cam, weights)?;
        if grad.amax() < opts.gradient_tol {
            break;
        }
        let mut accepted = false;
        let mut rejections = 0usize;
        while rejections < opts.patience {
            let damped = hess + nalgebra::Matrix6::identity() * lambda;
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                rejections += 1;
                continue;
            };
            let step: Vector6<f64> = chol.solve(&(-grad));
            let mut improved: Option<(CameraPose, LossBreakdown)> = None;
            for alpha in [1.0, 0.5, 0.25] {
                let candidate = apply_pose_increment(&pose, &(step * alpha));
                let cand_loss = pose_loss(&candidate, &view.pose, points, cam, weights)?;
                if !cand_loss.loss.is_finite() {
                    return Err(LocalizeError::Divergence { iterations });
                }
                if cand_loss.loss < breakdown.loss {
                    improved = Some((candidate, cand_loss));
                    break;
                }
            }
            if let Some((candidate, cand_loss)) = improved {
                pose = candidate;
                breakdown = cand_loss;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                iterations += 1;
                break;
            }
            lambda *= 10.0;
            rejections += 1;
            if lambda > opts.lambda_max {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    Ok((pose, breakdown, iterations))
}
