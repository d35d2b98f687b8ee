//! Constant-velocity Kalman smoothing for pose streams.
//!
//! State is `[t, v]` (translation and velocity, 6-D); the transition assumes
//! constant velocity over a uniform `dt`, with discrete white-noise
//! acceleration as process noise. Rotations pass through unchanged — the
//! filter smooths translation only. The initial velocity is the averaged
//! displacement per step over the whole stream; the measurement variance is
//! estimated from the residuals of the first frames against that
//! constant-velocity fit unless given explicitly.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::LocalizeError;
use crate::geometry::CameraPose;

/// Frames used for measurement-noise estimation.
const NOISE_ESTIMATION_FRAMES: usize = 10;
/// Floor for the estimated measurement variance.
const MIN_MEASUREMENT_VAR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct KalmanParams {
    /// White-noise acceleration spectral density (m²/s³).
    pub process_noise: f64,
    /// Measurement variance (m²); `None` estimates it from the stream.
    pub measurement_noise: Option<f64>,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_noise: 0.1,
            measurement_noise: None,
        }
    }
}

/// Filter state after an update step.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub covariance: Matrix6<f64>,
}

impl KalmanState {
    /// Symmetry defect of the covariance (max |P - Pᵀ| entry).
    pub fn symmetry_defect(&self) -> f64 {
        (self.covariance - self.covariance.transpose()).abs().max()
    }

    /// Smallest eigenvalue of the covariance; non-negative (within
    /// tolerance) when the covariance is PSD.
    pub fn min_eigenvalue(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.covariance)
            .eigenvalues
            .min()
    }
}

/// Smooths the translations of a pose stream sampled at uniform `dt`.
pub fn kalman_smooth(
    stream: &[CameraPose],
    dt: f64,
    params: &KalmanParams,
) -> Result<Vec<CameraPose>, LocalizeError> {
    kalman_smooth_with_states(stream, dt, params).map(|(poses, _)| poses)
}

/// Like [`kalman_smooth`], also returning the per-frame filter states.
pub fn kalman_smooth_with_states(
    stream: &[CameraPose],
    dt: f64,
    params: &KalmanParams,
) -> Result<(Vec<CameraPose>, Vec<KalmanState>), LocalizeError> {
    if !(dt > 0.0) {
        return Err(LocalizeError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if stream.len() < 2 {
        return Err(LocalizeError::InvalidParameter(
            "stream must contain at least 2 poses".into(),
        ));
    }
    let measurements: Vec<Vector3<f64>> = stream.iter().map(|p| *p.translation()).collect();
    if measurements.iter().any(|m| !m.iter().all(|v| v.is_finite())) {
        return Err(LocalizeError::NonFiniteInput);
    }

    let n = measurements.len();
    // averaged speed over the stream
    let v0 = (measurements[n - 1] - measurements[0]) / ((n - 1) as f64 * dt);
    let r_var = params.measurement_noise.unwrap_or_else(|| {
        let m = NOISE_ESTIMATION_FRAMES.min(n);
        let mut sum = 0.0;
        for (k, z) in measurements.iter().take(m).enumerate() {
            let fit = measurements[0] + v0 * (k as f64 * dt);
            sum += (z - fit).norm_squared();
        }
        (sum / (3.0 * m as f64)).max(MIN_MEASUREMENT_VAR)
    });

    // transition and process noise (per-axis blocks)
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * dt));
    let q = params.process_noise;
    let (q_pp, q_pv, q_vv) = (
        q * dt.powi(3) / 3.0,
        q * dt.powi(2) / 2.0,
        q * dt,
    );
    let mut q_mat = Matrix6::zeros();
    q_mat
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * q_pp));
    q_mat
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * q_pv));
    q_mat
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(Matrix3::identity() * q_pv));
    q_mat
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * q_vv));

    // initial state at the first measurement
    let mut x = Vector6::zeros();
    x.fixed_view_mut::<3, 1>(0, 0).copy_from(&measurements[0]);
    x.fixed_view_mut::<3, 1>(3, 0).copy_from(&v0);
    let mut p = Matrix6::zeros();
    p.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * r_var));
    p.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * (2.0 * r_var / (dt * dt))));

    let mut out = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    push_state(&mut states, &x, &p);
    out.push(CameraPose::new(
        *stream[0].rotation(),
        x.fixed_view::<3, 1>(0, 0).into_owned(),
    ));

    for k in 1..n {
        // predict
        x = f * x;
        p = f * p * f.transpose() + q_mat;
        // update with the measured translation
        let z = measurements[k];
        let pos = x.fixed_view::<3, 1>(0, 0).into_owned();
        let innovation = z - pos;
        let p_pp = p.fixed_view::<3, 3>(0, 0).into_owned();
        let s = p_pp + Matrix3::identity() * r_var;
        let s_inv = s.try_inverse().ok_or(LocalizeError::NonFiniteInput)?;
        // K = P Hᵀ S⁻¹, with H = [I 0]
        let p_cols = p.fixed_view::<6, 3>(0, 0).into_owned();
        let gain = p_cols * s_inv;
        x += gain * innovation;
        let mut h6 = nalgebra::Matrix3x6::zeros();
        h6.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        p = (Matrix6::identity() - gain * h6) * p;
        p = (p + p.transpose()) * 0.5;
        push_state(&mut states, &x, &p);
        out.push(CameraPose::new(
            *stream[k].rotation(),
            x.fixed_view::<3, 1>(0, 0).into_owned(),
        ));
    }
    Ok((out, states))
}

fn push_state(states: &mut Vec<KalmanState>, x: &Vector6<f64>, p: &Matrix6<f64>) {
    states.push(KalmanState {
        position: x.fixed_view::<3, 1>(0, 0).into_owned(),
        velocity: x.fixed_view::<3, 1>(3, 0).into_owned(),
        covariance: *p,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cv_trajectory(n: usize, dt: f64, v: Vector3<f64>) -> Vec<CameraPose> {
        (0..n)
            .map(|k| {
                CameraPose::from_wxyz(1.0, 0.0, 0.0, 0.0, v * (k as f64 * dt))
            })
            .collect()
    }

    #[test]
    fn noise_free_constant_velocity_tracks_exactly() {
        let truth = cv_trajectory(50, 0.5, Vector3::new(3.0, 1.0, 0.0));
        let out = kalman_smooth(&truth, 0.5, &KalmanParams::default()).unwrap();
        for (k, (a, b)) in out.iter().zip(truth.iter()).enumerate() {
            if k >= 5 {
                assert!(
                    (a.translation() - b.translation()).norm() < 1e-6,
                    "frame {k} drifted"
                );
            }
        }
    }

    #[test]
    fn gaussian_noise_rmse_is_reduced() {
        let dt = 0.1;
        let n = 200;
        let truth = cv_trajectory(n, dt, Vector3::new(5.0, 0.0, 0.0));
        let mut improvements = Vec::new();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<CameraPose> = truth
                .iter()
                .map(|p| {
                    let mut gauss = || -> f64 {
                        // Box-Muller
                        let u1: f64 = rng.random_range(1e-12..1.0);
                        let u2: f64 = rng.random_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    };
                    let offset = Vector3::new(gauss(), gauss(), gauss());
                    CameraPose::new(*p.rotation(), p.translation() + offset)
                })
                .collect();
            let smoothed = kalman_smooth(&noisy, dt, &KalmanParams::default()).unwrap();
            let rmse = |poses: &[CameraPose]| -> f64 {
                (poses
                    .iter()
                    .zip(truth.iter())
                    .map(|(a, b)| (a.translation() - b.translation()).norm_squared())
                    .sum::<f64>()
                    / n as f64)
                    .sqrt()
            };
            let before = rmse(&noisy);
            let after = rmse(&smoothed);
            assert!(after < before, "seed {seed}: {after} !< {before}");
            improvements.push(1.0 - after / before);
        }
        let mean_improvement = improvements.iter().sum::<f64>() / improvements.len() as f64;
        assert!(
            mean_improvement >= 0.2,
            "mean RMSE reduction {mean_improvement}"
        );
    }

    #[test]
    fn velocity_step_lags_then_converges_with_psd_covariance() {
        let dt = 0.1;
        let mut poses = Vec::new();
        let mut pos = Vector3::zeros();
        for k in 0..200 {
            let v = if k < 100 {
                Vector3::new(2.0, 0.0, 0.0)
            } else {
                Vector3::new(2.0, 1.5, 0.0)
            };
            pos += v * dt;
            poses.push(CameraPose::from_wxyz(1.0, 0.0, 0.0, 0.0, pos));
        }
        let (smoothed, states) =
            kalman_smooth_with_states(&poses, dt, &KalmanParams::default()).unwrap();
        for s in &states {
            assert!(s.symmetry_defect() < 1e-9);
            assert!(s.min_eigenvalue() > -1e-9, "covariance lost PSD");
        }
        // right after the step the filter lags the measurements
        let lag = (smoothed[105].translation() - poses[105].translation()).norm();
        assert!(lag > 1e-3, "expected lag after the velocity step, got {lag}");
        // and converges again before the end
        let settled = (smoothed[199].translation() - poses[199].translation()).norm();
        assert!(settled < lag, "filter failed to converge: {settled} vs {lag}");
    }

    #[test]
    fn rotations_pass_through_unchanged() {
        let mut poses = cv_trajectory(20, 0.5, Vector3::new(1.0, 0.0, 0.0));
        poses[7] = CameraPose::from_wxyz(0.8, 0.1, 0.5, 0.2, *poses[7].translation());
        let out = kalman_smooth(&poses, 0.5, &KalmanParams::default()).unwrap();
        for (a, b) in out.iter().zip(poses.iter()) {
            assert_eq!(
                a.rotation().quaternion().coords,
                b.rotation().quaternion().coords
            );
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let poses = cv_trajectory(1, 0.5, Vector3::zeros());
        assert!(kalman_smooth(&poses, 0.5, &KalmanParams::default()).is_err());
        let poses = cv_trajectory(10, 0.5, Vector3::zeros());
        assert!(kalman_smooth(&poses, 0.0, &KalmanParams::default()).is_err());
        let mut bad = cv_trajectory(10, 0.5, Vector3::zeros());
        bad[3] = CameraPose::from_wxyz(1.0, 0.0, 0.0, 0.0, Vector3::new(f64::NAN, 0.0, 0.0));
        assert!(matches!(
            kalman_smooth(&bad, 0.5, &KalmanParams::default()),
            Err(LocalizeError::NonFiniteInput)
        ));
    }
}
