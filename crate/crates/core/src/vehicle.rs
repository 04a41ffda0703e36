//! 4-DOF bicycle model with a DC-motor drive train.
//!
//! State is `[x, y, theta, v]` in the local tangent plane (x east, y north,
//! heading measured counter-clockwise from east). Input is `[alpha, delta]`:
//! throttle in [0, 1] and front steering angle. The same model serves as the
//! simulation plant, the EKF process model and the MPC prediction model.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("steering angle {0} rad is at or beyond the tangent singularity")]
    SteeringSingularity(f64),
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("invalid vehicle parameter: {0}")]
    InvalidParams(String),
    #[error("speed {speed} m/s needs throttle {throttle:.4}, above full throttle")]
    InfeasibleSpeed { speed: f64, throttle: f64 },
    #[error("non-finite state or input")]
    NonFinite,
}

/// Planar pose plus forward speed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.theta, self.v)
    }

    /// Builds a state from a raw vector, wrapping the heading.
    pub fn from_vector(q: &Vector4<f64>) -> Self {
        Self {
            x: q[0],
            y: q[1],
            theta: wrap_angle(q[2]),
            v: q[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

/// Throttle and steering command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub alpha: f64,
    pub delta: f64,
}

impl ControlInput {
    pub fn new(alpha: f64, delta: f64) -> Self {
        Self { alpha, delta }
    }

    /// Saturates the command into the actuator box.
    pub fn clamped(&self, params: &VehicleParams) -> Self {
        Self {
            alpha: self.alpha.clamp(0.0, 1.0),
            delta: self.delta.clamp(-params.delta_max, params.delta_max),
        }
    }
}

/// Physical constants of the vehicle and its motor.
///
/// The defaults describe a generic 1:6-scale car and are calibration
/// placeholders, not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Wheel radius (m).
    pub r_wheel: f64,
    /// Wheel inertia (kg·m²).
    pub i_wheel: f64,
    /// Wheelbase (m).
    pub wheelbase: f64,
    /// Gear ratio.
    pub gamma: f64,
    /// Motor stall torque (N·m).
    pub tau_0: f64,
    /// Motor no-load angular velocity (rad/s).
    pub omega_0: f64,
    /// Constant resistance torque (N·m).
    pub c_0: f64,
    /// Speed-proportional resistance coefficient (N·m·s).
    pub c_1: f64,
    /// Steering limit (rad).
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            r_wheel: 0.08,
            i_wheel: 1e-3,
            wheelbase: 0.5,
            gamma: 0.33,
            tau_0: 0.3,
            omega_0: 1300.0,
            c_0: 0.02,
            c_1: 1e-4,
            delta_max: 0.45,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let positive = [
            ("r_wheel", self.r_wheel),
            ("i_wheel", self.i_wheel),
            ("wheelbase", self.wheelbase),
            ("gamma", self.gamma),
            ("tau_0", self.tau_0),
            ("omega_0", self.omega_0),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(VehicleError::InvalidParams(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        for (name, value) in [("c_0", self.c_0), ("c_1", self.c_1)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(VehicleError::InvalidParams(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        if !(self.delta_max > 0.0 && self.delta_max < FRAC_PI_2) {
            return Err(VehicleError::InvalidParams(format!(
                "delta_max must lie in (0, pi/2), got {}",
                self.delta_max
            )));
        }
        Ok(())
    }

    /// Wheel radius times gear ratio: converts motor speed to ground speed.
    fn drive_factor(&self) -> f64 {
        self.r_wheel * self.gamma
    }

    /// Slope of the speed derivative with respect to speed,
    /// `-(tau_0 / omega_0 + c_1) / I_wheel`.
    pub fn speed_damping(&self) -> f64 {
        -(self.tau_0 / self.omega_0 + self.c_1) / self.i_wheel
    }

    /// Slope of the speed derivative with respect to throttle.
    pub fn throttle_gain(&self) -> f64 {
        self.tau_0 * self.drive_factor() / self.i_wheel
    }

    /// Ground speed at which full-throttle drive torque vanishes.
    pub fn no_load_speed(&self) -> f64 {
        self.omega_0 * self.drive_factor()
    }
}

/// Motor drive torque `tau_0·alpha − tau_0·v / (omega_0·R·gamma)`.
pub fn motor_drive_torque(v: f64, alpha: f64, params: &VehicleParams) -> f64 {
    params.tau_0 * alpha - params.tau_0 * v / (params.omega_0 * params.drive_factor())
}

/// Motor resistance torque `v·c_1 / (R·gamma) + c_0`.
pub fn motor_resistance_torque(v: f64, params: &VehicleParams) -> f64 {
    v * params.c_1 / params.drive_factor() + params.c_0
}

fn check_steering(delta: f64) -> Result<(), VehicleError> {
    if !delta.is_finite() {
        return Err(VehicleError::NonFinite);
    }
    if delta.abs() >= FRAC_PI_2 {
        return Err(VehicleError::SteeringSingularity(delta));
    }
    Ok(())
}

fn speed_rate(v: f64, alpha: f64, params: &VehicleParams) -> f64 {
    let net = motor_drive_torque(v, alpha, params) - motor_resistance_torque(v, params);
    if v <= 0.0 && net <= 0.0 {
        // static resistance cannot push the car backwards from rest
        return 0.0;
    }
    params.drive_factor() / params.i_wheel * net
}

/// Continuous-time state derivative.
pub fn state_derivative(
    q: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
) -> Result<Vector4<f64>, VehicleError> {
    check_steering(u.delta)?;
    if !q.is_finite() || !u.alpha.is_finite() {
        return Err(VehicleError::NonFinite);
    }
    let (sin, cos) = q.theta.sin_cos();
    Ok(Vector4::new(
        q.v * cos,
        q.v * sin,
        q.v * u.delta.tan() / params.wheelbase,
        speed_rate(q.v, u.alpha, params),
    ))
}

/// One explicit Euler step; heading is wrapped and speed floored at zero.
pub fn step(
    q: &VehicleState,
    u: &ControlInput,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState, VehicleError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(VehicleError::InvalidTimeStep(dt));
    }
    let rate = state_derivative(q, u, params)?;
    let next = q.to_vector() + rate * dt;
    Ok(VehicleState {
        x: next[0],
        y: next[1],
        theta: wrap_angle(next[2]),
        v: next[3].max(0.0),
    })
}

/// Jacobian of the discrete update `q + f(q, u)·dt` with respect to `q`.
///
/// `dt = 0` is accepted and yields the identity.
pub fn motion_jacobian(
    q: &VehicleState,
    u: &ControlInput,
    dt: f64,
    params: &VehicleParams,
) -> Result<Matrix4<f64>, VehicleError> {
    check_steering(u.delta)?;
    let (sin, cos) = q.theta.sin_cos();
    let mut f = Matrix4::identity();
    f[(0, 2)] = -q.v * sin * dt;
    f[(0, 3)] = cos * dt;
    f[(1, 2)] = q.v * cos * dt;
    f[(1, 3)] = sin * dt;
    f[(2, 3)] = u.delta.tan() / params.wheelbase * dt;

    let rate = speed_rate(q.v, u.alpha, params);
    let resting = q.v <= 0.0 && rate == 0.0;
    let floored = q.v + rate * dt < 0.0;
    // the zero-speed floor flattens the speed row
    f[(3, 3)] = if dt > 0.0 && (resting || floored) {
        0.0
    } else {
        1.0 + params.speed_damping() * dt
    };
    Ok(f)
}

/// Throttle that holds `v_r` constant, i.e. drive torque equals resistance.
pub fn steady_state_throttle(v_r: f64, params: &VehicleParams) -> Result<f64, VehicleError> {
    if !(v_r.is_finite() && v_r >= 0.0) {
        return Err(VehicleError::InvalidParams(format!(
            "reference speed must be non-negative, got {v_r}"
        )));
    }
    let alpha = v_r / params.no_load_speed() + motor_resistance_torque(v_r, params) / params.tau_0;
    if alpha > 1.0 {
        return Err(VehicleError::InfeasibleSpeed {
            speed: v_r,
            throttle: alpha,
        });
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn default_params_are_valid() {
        params().validate().unwrap();
        let mut bad = params();
        bad.delta_max = FRAC_PI_2;
        assert!(bad.validate().is_err());
        bad = params();
        bad.c_1 = -1.0;
        assert!(bad.validate().is_err());
        bad = params();
        bad.omega_0 = f64::NAN;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn drive_torque_corners() {
        let p = params();
        assert_eq!(motor_drive_torque(0.0, 0.0, &p), 0.0);
        assert_eq!(motor_drive_torque(0.0, 1.0, &p), p.tau_0);
        let no_load = p.omega_0 * p.r_wheel * p.gamma;
        assert!(motor_drive_torque(no_load, 1.0, &p).abs() < 1e-15);
    }

    #[test]
    fn resistance_torque() {
        let p = params();
        assert_eq!(motor_resistance_torque(0.0, &p), p.c_0);
        let mut frictionless = p;
        frictionless.c_1 = 0.0;
        assert_eq!(motor_resistance_torque(3.7, &frictionless), p.c_0);
        // 1 * 1e-4 / (0.08 * 0.33) + 0.02
        let by_hand = 1e-4 / 0.0264 + 0.02;
        assert!((motor_resistance_torque(1.0, &p) - by_hand).abs() < 1e-15);
    }

    #[test]
    fn derivative_at_equilibrium() {
        let p = params();
        let alpha = steady_state_throttle(1.0, &p).unwrap();
        let d = state_derivative(
            &VehicleState::new(0.0, 0.0, 0.0, 1.0),
            &ControlInput::new(alpha, 0.0),
            &p,
        )
        .unwrap();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
        assert!(d[3].abs() < 1e-12);
    }

    #[test]
    fn derivative_heading_north() {
        let d = state_derivative(
            &VehicleState::new(0.0, 0.0, PI / 2.0, 2.0),
            &ControlInput::new(0.5, 0.0),
            &params(),
        )
        .unwrap();
        assert!(d[0].abs() < 1e-15);
        assert_eq!(d[1], 2.0);
    }

    #[test]
    fn rest_is_absorbing_without_throttle() {
        let d = state_derivative(
            &VehicleState::default(),
            &ControlInput::default(),
            &params(),
        )
        .unwrap();
        assert_eq!(d, Vector4::zeros());
    }

    #[test]
    fn steering_singularity_rejected() {
        let q = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        for delta in [FRAC_PI_2, -FRAC_PI_2, 2.0] {
            let u = ControlInput::new(0.2, delta);
            assert!(matches!(
                state_derivative(&q, &u, &params()),
                Err(VehicleError::SteeringSingularity(_))
            ));
            assert!(motion_jacobian(&q, &u, 0.1, &params()).is_err());
        }
    }

    #[test]
    fn step_fixed_point_and_straight_line() {
        let p = params();
        let rest = VehicleState::new(1.0, -2.0, 0.3, 0.0);
        assert_eq!(
            step(&rest, &ControlInput::default(), 0.1, &p).unwrap(),
            rest
        );

        let alpha = steady_state_throttle(1.0, &p).unwrap();
        let next = step(
            &VehicleState::new(0.0, 0.0, 0.0, 1.0),
            &ControlInput::new(alpha, 0.0),
            0.1,
            &p,
        )
        .unwrap();
        assert!((next.x - 0.1).abs() < 1e-15);
        assert_eq!(next.y, 0.0);
        assert_eq!(next.theta, 0.0);
        assert!((next.v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_bad_dt() {
        let q = VehicleState::default();
        let u = ControlInput::default();
        assert!(step(&q, &u, 0.0, &params()).is_err());
        assert!(step(&q, &u, -0.1, &params()).is_err());
        assert!(step(&q, &u, f64::NAN, &params()).is_err());
    }

    #[test]
    fn step_wraps_heading_and_floors_speed() {
        let p = params();
        let q = VehicleState::new(0.0, 0.0, PI - 1e-3, 0.05);
        let next = step(&q, &ControlInput::new(0.0, 0.4), 0.1, &p).unwrap();
        assert!(next.theta > -PI && next.theta <= PI);
        assert!(
            next.theta < 0.0,
            "heading should have wrapped: {}",
            next.theta
        );
        assert_eq!(next.v, 0.0);
    }

    /// Euler with `n` substeps over `dt`.
    fn refined(q: &VehicleState, u: &ControlInput, dt: f64, n: usize) -> VehicleState {
        let mut s = *q;
        for _ in 0..n {
            s = step(&s, u, dt / n as f64, &params()).unwrap();
        }
        s
    }

    #[test]
    fn euler_step_halving_converges_linearly() {
        let q = VehicleState::new(0.3, -0.2, 0.7, 1.2);
        let u = ControlInput::new(0.4, 0.2);
        let mut errors = Vec::new();
        for dt in [0.1, 0.05, 0.025] {
            let coarse = step(&q, &u, dt, &params()).unwrap().to_vector();
            let fine = refined(&q, &u, dt, 4).to_vector();
            errors.push((coarse - fine).norm());
        }
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(ratio > 3.5 && ratio < 4.5, "local error ratio {ratio}");
        }
    }

    #[test]
    fn jacobian_identity_at_zero_dt() {
        let j = motion_jacobian(
            &VehicleState::default(),
            &ControlInput::default(),
            0.0,
            &params(),
        )
        .unwrap();
        assert_eq!(j, Matrix4::identity());
    }

    #[test]
    fn jacobian_axis_aligned_entries() {
        let p = params();
        let j = motion_jacobian(
            &VehicleState::new(0.0, 0.0, 0.0, 1.0),
            &ControlInput::new(0.3, 0.0),
            0.1,
            &p,
        )
        .unwrap();
        assert_eq!(j[(0, 3)], 0.1);
        assert_eq!(j[(1, 2)], 0.1);
        assert_eq!(j[(0, 2)], 0.0);
        assert_eq!(j[(2, 3)], 0.0);
        assert!((j[(3, 3)] - (1.0 + 0.1 * p.speed_damping())).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let p = params();
        let q = VehicleState::new(1.0, 2.0, 0.8, 1.3);
        let u = ControlInput::new(0.6, -0.3);
        let dt = 0.1;
        let j = motion_jacobian(&q, &u, dt, &p).unwrap();
        let h = 1e-6;
        for col in 0..4 {
            let mut plus = q.to_vector();
            let mut minus = q.to_vector();
            plus[col] += h;
            minus[col] -= h;
            let fp = step(&VehicleState::from_vector(&plus), &u, dt, &p)
                .unwrap()
                .to_vector();
            let fm = step(&VehicleState::from_vector(&minus), &u, dt, &p)
                .unwrap()
                .to_vector();
            for row in 0..4 {
                let mut diff = fp[row] - fm[row];
                if row == 2 {
                    diff = wrap_angle(diff);
                }
                let fd = diff / (2.0 * h);
                assert!((fd - j[(row, col)]).abs() < 1e-6, "({row},{col})");
            }
        }
    }

    #[test]
    fn steady_state_throttle_values() {
        let p = params();
        assert_eq!(steady_state_throttle(0.0, &p).unwrap(), p.c_0 / p.tau_0);
        let mut frictionless = p;
        frictionless.c_0 = 0.0;
        assert_eq!(steady_state_throttle(0.0, &frictionless).unwrap(), 0.0);

        let alpha = steady_state_throttle(1.0, &p).unwrap();
        let vdot = state_derivative(
            &VehicleState::new(0.0, 0.0, 0.0, 1.0),
            &ControlInput::new(alpha, 0.1),
            &p,
        )
        .unwrap()[3];
        assert!(vdot.abs() < 1e-12);

        assert!(matches!(
            steady_state_throttle(100.0, &p),
            Err(VehicleError::InfeasibleSpeed { .. })
        ));
        assert!(steady_state_throttle(-1.0, &p).is_err());
    }

    #[test]
    fn steady_throttle_holds_speed_under_simulation() {
        let p = params();
        for v_r in [0.5, 1.0, 2.0] {
            let alpha = steady_state_throttle(v_r, &p).unwrap();
            let mut q = VehicleState::new(0.0, 0.0, 0.0, v_r);
            for _ in 0..500 {
                let next = step(&q, &ControlInput::new(alpha, 0.2), 0.1, &p).unwrap();
                assert!((next.v - q.v).abs() < 1e-9);
                q = next;
            }
        }
    }
}
