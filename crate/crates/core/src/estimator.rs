//! Extended Kalman filter over the 4-DOF vehicle model.
//!
//! Prediction propagates the estimate through one Euler step of the motion
//! model and the covariance through its Jacobian. Corrections come from GPS
//! position fixes (already projected into the local plane) and magnetometer
//! headings. Speed is never observed directly; it is corrected only through
//! its cross-covariance with position and heading.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::vehicle::{
    motion_jacobian, step, ControlInput, VehicleError, VehicleParams, VehicleState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Dynamics(#[from] VehicleError),
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,
    #[error("non-finite measurement")]
    NonFiniteMeasurement,
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub q_hat: VehicleState,
    pub p: Matrix4<f64>,
}

impl EstimatorState {
    pub fn new(q_hat: VehicleState, p: Matrix4<f64>) -> Self {
        Self { q_hat, p }
    }
}

/// Noise model of the filter. All blocks must be symmetric positive
/// semi-definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfConfig {
    pub p0: Matrix4<f64>,
    pub q_process: Matrix4<f64>,
    pub r_gps: Matrix2<f64>,
    pub r_mag: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self::from_diagonals(
            [1e-2; 4],
            [1e-4, 1e-4, 1e-3, 1e-2],
            [0.64, 0.64],
            0.02 * 0.02,
        )
    }
}

impl EkfConfig {
    pub fn from_diagonals(p0: [f64; 4], q_process: [f64; 4], r_gps: [f64; 2], r_mag: f64) -> Self {
        Self {
            p0: Matrix4::from_diagonal(&Vector4::from(p0)),
            q_process: Matrix4::from_diagonal(&Vector4::from(q_process)),
            r_gps: Matrix2::from_diagonal(&Vector2::from(r_gps)),
            r_mag,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        check_psd4("p0", &self.p0)?;
        check_psd4("q_process", &self.q_process)?;
        let r = &self.r_gps;
        if !r.iter().all(|x| x.is_finite()) || (r - r.transpose()).amax() > 1e-12 {
            return Err(EstimatorError::InvalidConfig(
                "r_gps must be finite and symmetric".into(),
            ));
        }
        if r[(0, 0)] < 0.0 || r[(1, 1)] < 0.0 || r.determinant() < -1e-12 {
            return Err(EstimatorError::InvalidConfig(
                "r_gps must be positive semi-definite".into(),
            ));
        }
        if !(self.r_mag.is_finite() && self.r_mag >= 0.0) {
            return Err(EstimatorError::InvalidConfig(
                "r_mag must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn check_psd4(name: &str, m: &Matrix4<f64>) -> Result<(), EstimatorError> {
    if !m.iter().all(|x| x.is_finite()) || (m - m.transpose()).amax() > 1e-12 {
        return Err(EstimatorError::InvalidConfig(format!(
            "{name} must be finite and symmetric"
        )));
    }
    let min_eig = m.symmetric_eigenvalues().min();
    if min_eig < -1e-12 {
        return Err(EstimatorError::InvalidConfig(format!(
            "{name} must be positive semi-definite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

fn symmetrize(p: &Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// Propagates the estimate through one control period.
pub fn predict(
    est: &EstimatorState,
    u: &ControlInput,
    dt: f64,
    params: &VehicleParams,
    config: &EkfConfig,
) -> Result<EstimatorState, EstimatorError> {
    let f = motion_jacobian(&est.q_hat, u, dt, params)?;
    let q_hat = step(&est.q_hat, u, dt, params)?;
    let p = f * est.p * f.transpose() + config.q_process;
    Ok(EstimatorState {
        q_hat,
        p: symmetrize(&p),
    })
}

/// Corrects with a planar position fix `z` (m, local plane).
pub fn update_gps(
    est: &EstimatorState,
    z: &Vector2<f64>,
    config: &EkfConfig,
) -> Result<EstimatorState, EstimatorError> {
    if !(z.x.is_finite() && z.y.is_finite()) {
        return Err(EstimatorError::NonFiniteMeasurement);
    }
    // H selects (x, y): P·Hᵀ is the first two columns of P
    let pht = est.p.fixed_columns::<2>(0).into_owned();
    let s = est.p.fixed_view::<2, 2>(0, 0) + config.r_gps;
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if s.determinant().abs() <= 1e-12 * scale * scale {
        return Err(EstimatorError::SingularInnovation);
    }
    let s_inv = s.try_inverse().ok_or(EstimatorError::SingularInnovation)?;
    let gain = pht * s_inv;

    let innovation = z - Vector2::new(est.q_hat.x, est.q_hat.y);
    let corrected = est.q_hat.to_vector() + gain * innovation;

    let mut kh = Matrix4::zeros();
    kh.fixed_columns_mut::<2>(0).copy_from(&gain);
    let p = (Matrix4::identity() - kh) * est.p;
    Ok(EstimatorState {
        q_hat: VehicleState::from_vector(&corrected),
        p: symmetrize(&p),
    })
}

/// Corrects with a heading observation; the innovation is wrapped so that a
/// measurement across the ±π seam pulls the short way round.
pub fn update_heading(
    est: &EstimatorState,
    theta_z: f64,
    config: &EkfConfig,
) -> Result<EstimatorState, EstimatorError> {
    if !theta_z.is_finite() {
        return Err(EstimatorError::NonFiniteMeasurement);
    }
    let s = est.p[(2, 2)] + config.r_mag;
    if s <= 0.0 {
        // nothing to weigh: prior and measurement both claim certainty
        return Ok(*est);
    }
    let gain: Vector4<f64> = est.p.column(2) / s;
    let innovation = wrap_angle(theta_z - est.q_hat.theta);
    let corrected = est.q_hat.to_vector() + gain * innovation;

    let mut kh = Matrix4::zeros();
    kh.set_column(2, &gain);
    let p = (Matrix4::identity() - kh) * est.p;
    Ok(EstimatorState {
        q_hat: VehicleState::from_vector(&corrected),
        p: symmetrize(&p),
    })
}
