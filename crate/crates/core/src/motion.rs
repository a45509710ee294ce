//! Image-plane constant-velocity motion model with IMU rotation coupling.
//!
//! State layout is `[p_u, ṗ_u, p_v, ṗ_v]`. The rotational optical-flow term
//! `B(x)·ω` shifts the predicted position; process noise enters the covariance
//! only.

use nalgebra::{Matrix2x4, Matrix4, Matrix4x3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint};
use crate::linalg::{check_psd, symmetrize};

pub type StateVector = Vector4<f64>;
pub type StateCovariance = Matrix4<f64>;

pub const PU: usize = 0;
pub const VU: usize = 1;
pub const PV: usize = 2;
pub const VV: usize = 3;

/// Position and velocity of one agent in the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackState {
    pub p_u: f64,
    pub pdot_u: f64,
    pub p_v: f64,
    pub pdot_v: f64,
}

impl TrackState {
    pub fn new(p_u: f64, pdot_u: f64, p_v: f64, pdot_v: f64) -> Self {
        Self { p_u, pdot_u, p_v, pdot_v }
    }

    pub fn at_rest(p: PixelPoint) -> Self {
        Self::new(p.u, 0.0, p.v, 0.0)
    }

    pub fn position(&self) -> PixelPoint {
        PixelPoint::new(self.p_u, self.p_v)
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::new(self.p_u, self.pdot_u, self.p_v, self.pdot_v)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

impl From<StateVector> for TrackState {
    fn from(v: StateVector) -> Self {
        Self::new(v[PU], v[VU], v[PV], v[VV])
    }
}

impl From<TrackState> for StateVector {
    fn from(s: TrackState) -> Self {
        s.to_vector()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Sampling time in seconds.
    pub dt: f64,
    /// Acceleration noise intensity `q`, px/s².
    pub accel_noise: f64,
    pub intrinsics: CameraIntrinsics,
}

impl ModelParams {
    pub fn new(dt: f64, accel_noise: f64, intrinsics: CameraIntrinsics) -> Result<Self> {
        let p = Self { dt, accel_noise, intrinsics };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(MttError::InvalidConfig("dt must be > 0".into()));
        }
        if !(self.accel_noise >= 0.0 && self.accel_noise.is_finite()) {
            return Err(MttError::InvalidConfig("accel_noise must be >= 0".into()));
        }
        self.intrinsics.validate()
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGaussian {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl StateGaussian {
    pub fn new(mean: StateVector, covariance: StateCovariance) -> Result<Self> {
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(MttError::InvalidConfig("non-finite state".into()));
        }
        check_psd(&covariance)?;
        Ok(Self { mean, covariance })
    }

    pub fn state(&self) -> TrackState {
        self.mean.into()
    }
}

pub fn transition_matrix(params: &ModelParams) -> Matrix4<f64> {
    let dt = params.dt;
    Matrix4::new(
        1.0, dt, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, dt, //
        0.0, 0.0, 0.0, 1.0,
    )
}

/// `q·diag(δt²/2, δt, δt²/2, δt)`.
pub fn process_noise(params: &ModelParams) -> Matrix4<f64> {
    let dt = params.dt;
    let half = 0.5 * dt * dt;
    Matrix4::from_diagonal(&Vector4::new(half, dt, half, dt)) * params.accel_noise
}

/// Rotational optical-flow matrix scaled by `dt`, evaluated at the track position.
pub fn control_matrix(state: &StateVector, params: &ModelParams) -> Matrix4x3<f64> {
    let f = params.intrinsics.focal_length;
    let x = state[PU] - params.intrinsics.cu();
    let y = state[PV] - params.intrinsics.cv();
    let dt = params.dt;
    Matrix4x3::new(
        x * y / f, -x * x / f - f, y, //
        0.0, 0.0, 0.0, //
        f + y * y / f, -x * y / f, -x, //
        0.0, 0.0, 0.0,
    ) * dt
}

/// Mean propagation `A·x + B(x)·ω`.
pub fn propagate_mean(state: &StateVector, omega: &Vector3<f64>, params: &ModelParams) -> StateVector {
    transition_matrix(params) * state + control_matrix(state, params) * omega
}

/// `F = A + ∂(B(x)·ω)/∂x`, closed form. Only the position columns pick up
/// the rotational coupling since `B` depends on `p_u` and `p_v` alone.
pub fn linearized_transition(
    state: &StateVector,
    omega: &Vector3<f64>,
    params: &ModelParams,
) -> Matrix4<f64> {
    let f = params.intrinsics.focal_length;
    let x = state[PU] - params.intrinsics.cu();
    let y = state[PV] - params.intrinsics.cv();
    let dt = params.dt;
    let (w1, w2, w3) = (omega.x, omega.y, omega.z);

    let mut m = transition_matrix(params);
    m[(PU, PU)] += dt * (y / f * w1 - 2.0 * x / f * w2);
    m[(PU, PV)] += dt * (x / f * w1 + w3);
    m[(PV, PU)] += dt * (-y / f * w2 - w3);
    m[(PV, PV)] += dt * (2.0 * y / f * w1 - x / f * w2);
    m
}

pub fn predict(g: &StateGaussian, omega: &Vector3<f64>, params: &ModelParams) -> StateGaussian {
    let f = linearized_transition(&g.mean, omega, params);
    StateGaussian {
        mean: propagate_mean(&g.mean, omega, params),
        covariance: symmetrize(&(f * g.covariance * f.transpose() + process_noise(params))),
    }
}

/// Position-selection measurement model.
pub fn measurement_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};
    use proptest::prelude::*;

    fn params(dt: f64, q: f64) -> ModelParams {
        ModelParams::new(dt, q, CameraIntrinsics::default()).unwrap()
    }

    #[test]
    fn transition_unit_step() {
        let a = transition_matrix(&params(1.0, 0.0));
        let expected = Matrix4::new(
            1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0,
        );
        assert_eq!(a, expected);
    }

    #[test]
    fn transition_propagates_position() {
        let a = transition_matrix(&params(0.1, 0.0));
        let x = a * StateVector::new(100.0, 5.0, 200.0, 0.0);
        assert!((x[PU] - 100.5).abs() < 1e-12);
        assert_eq!(x[PV], 200.0);
    }

    #[test]
    fn transition_small_step_tends_to_identity() {
        let a = transition_matrix(&ModelParams { dt: 1e-15, ..params(1.0, 0.0) });
        assert!((a - Matrix4::identity()).abs().max() < 1e-14);
    }

    #[test]
    fn process_noise_values() {
        assert_eq!(process_noise(&params(0.3, 0.0)), Matrix4::zeros());
        assert_eq!(
            process_noise(&params(1.0, 2.0)),
            Matrix4::from_diagonal(&Vector4::new(1.0, 2.0, 1.0, 2.0))
        );
        assert_eq!(
            process_noise(&params(0.5, 1.0)),
            Matrix4::from_diagonal(&Vector4::new(0.125, 0.5, 0.125, 0.5))
        );
    }

    #[test]
    fn control_at_principal_point() {
        let b = control_matrix(&StateVector::new(320.0, 3.0, 240.0, -2.0), &params(0.1, 0.0));
        let expected = Matrix4x3::new(
            0.0, -40.0, 0.0, 0.0, 0.0, 0.0, 40.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        );
        assert!((b - expected).abs().max() < 1e-12);
    }

    #[test]
    fn control_zero_dt() {
        let p = ModelParams { dt: 0.0, ..params(1.0, 0.0) };
        assert_eq!(control_matrix(&StateVector::new(1.0, 2.0, 3.0, 4.0), &p), Matrix4x3::zeros());
    }

    #[test]
    fn control_hand_evaluated_row() {
        // x=100, y=50, f=400: (100*50/400, -100²/400 - 400, 50)
        let b = control_matrix(&StateVector::new(420.0, 0.0, 290.0, 0.0), &params(1.0, 0.0));
        assert!((b[(0, 0)] - 12.5).abs() < 1e-12);
        assert!((b[(0, 1)] + 425.0).abs() < 1e-12);
        assert!((b[(0, 2)] - 50.0).abs() < 1e-12);
        assert_eq!(b.row(1).sum() + b.row(3).sum(), 0.0);
    }

    #[test]
    fn zero_omega_linearization_is_transition() {
        let p = params(0.07, 1.0);
        let s = StateVector::new(12.0, 3.0, 400.0, -8.0);
        assert_eq!(linearized_transition(&s, &Vector3::zeros(), &p), transition_matrix(&p));
    }

    #[test]
    fn yaw_coupling_at_principal_point() {
        let p = params(0.1, 0.0);
        let s = StateVector::new(320.0, 0.0, 240.0, 0.0);
        let f = linearized_transition(&s, &Vector3::new(0.0, 0.0, 0.3), &p);
        assert!((f[(PU, PV)] - 0.1 * 0.3).abs() < 1e-15);
        assert!((f[(PV, PU)] + 0.1 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn predict_constant_velocity() {
        let p = params(0.1, 0.0);
        let cov = Matrix4::from_diagonal(&Vector4::new(4.0, 1.0, 9.0, 2.0));
        let g = StateGaussian::new(StateVector::new(100.0, 5.0, 200.0, 0.0), cov).unwrap();
        let out = predict(&g, &Vector3::zeros(), &p);
        assert!((out.mean - StateVector::new(100.5, 5.0, 200.0, 0.0)).abs().max() < 1e-12);
        let a = transition_matrix(&p);
        assert!((out.covariance - a * cov * a.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn predict_rotation_shift() {
        let p = params(0.1, 0.0);
        let g = StateGaussian::new(StateVector::new(320.0, 0.0, 240.0, 0.0), Matrix4::identity())
            .unwrap();
        let out = predict(&g, &Vector3::new(0.0, 0.01, 0.0), &p);
        assert!((out.mean[PU] - (320.0 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn predict_grows_trace_with_noise() {
        let p = params(0.2, 3.0);
        let g = StateGaussian::new(StateVector::new(1.0, 1.0, 1.0, 1.0), Matrix4::identity())
            .unwrap();
        let a = transition_matrix(&p);
        let out = predict(&g, &Vector3::zeros(), &p);
        assert!(out.covariance.trace() >= (a * g.covariance * a.transpose()).trace());
    }

    #[test]
    fn measurement_matrix_selects_position() {
        let h = measurement_matrix();
        assert_eq!(h * StateVector::new(100.0, 5.0, 200.0, 0.0), Vector2::new(100.0, 200.0));
        assert_eq!(h * StateVector::zeros(), Vector2::zeros());
        assert_eq!(h * h.transpose(), Matrix2::identity());
    }

    fn fd_jacobian(s: &StateVector, w: &Vector3<f64>, p: &ModelParams, step: f64) -> Matrix4<f64> {
        let mut j = Matrix4::zeros();
        for c in 0..4 {
            let mut hi = *s;
            let mut lo = *s;
            hi[c] += step;
            lo[c] -= step;
            let d = (propagate_mean(&hi, w, p) - propagate_mean(&lo, w, p)) / (2.0 * step);
            j.set_column(c, &d);
        }
        j
    }

    proptest! {
        #[test]
        fn jacobian_matches_central_differences(
            pu in 0.0..640.0f64, vu in -100.0..100.0f64,
            pv in 0.0..480.0f64, vv in -100.0..100.0f64,
            w1 in -2.0..2.0f64, w2 in -2.0..2.0f64, w3 in -2.0..2.0f64,
            dt in 0.001..0.5f64,
        ) {
            let p = params(dt, 1.0);
            let s = StateVector::new(pu, vu, pv, vv);
            let w = Vector3::new(w1, w2, w3);
            let analytic = linearized_transition(&s, &w, &p);
            let numeric = fd_jacobian(&s, &w, &p, 1e-4);
            let scale = analytic.abs().max().max(1.0);
            prop_assert!((analytic - numeric).abs().max() / scale < 1e-6);
        }

        #[test]
        fn noiseless_predict_keeps_velocity(
            pu in 0.0..640.0f64, vu in -100.0..100.0f64,
            pv in 0.0..480.0f64, vv in -100.0..100.0f64, dt in 0.001..1.0f64,
        ) {
            let p = params(dt, 0.0);
            let g = StateGaussian { mean: StateVector::new(pu, vu, pv, vv), covariance: Matrix4::identity() };
            let out = predict(&g, &Vector3::zeros(), &p);
            prop_assert_eq!(out.mean[VU], vu);
            prop_assert_eq!(out.mean[VV], vv);
            prop_assert!((out.covariance - out.covariance.transpose()).abs().max() < 1e-12);
        }
    }
}
