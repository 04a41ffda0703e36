//! Virtual GPS and magnetometer.
//!
//! GPS noise follows a random walk in the second derivative of position with
//! a mean-reverting drift on the acceleration draw:
//!
//! ```text
//! m  = -p / p_max
//! a  ~ N(m, sigma)
//! v' = v + a
//! p' = p + v + a
//! ```
//!
//! One independent chain runs per horizontal axis. The magnetometer is a
//! direct heading observation with additive Gaussian noise.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::geodesy::{from_ltp, GeodeticCoord, LtpFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid sensor parameter: {0}")]
    InvalidParams(String),
}

/// Source of normal draws. Injected so tests can observe the requested
/// distribution or substitute a deterministic stream.
pub trait GaussianSource {
    fn gaussian(&mut self, mean: f64, std_dev: f64) -> f64;
}

/// Seeded ChaCha stream. `stream` separates sub-streams sharing a seed.
#[derive(Debug, Clone)]
pub struct NoiseStream(ChaCha8Rng);

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }
}

impl GaussianSource for NoiseStream {
    fn gaussian(&mut self, mean: f64, std_dev: f64) -> f64 {
        let z: f64 = self.0.sample(StandardNormal);
        mean + std_dev * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn stream_index(self) -> u64 {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

/// Noise position and its first difference for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsNoiseState {
    pub p: f64,
    pub v: f64,
    pub axis: Axis,
}

impl GpsNoiseState {
    /// Chain at rest: no offset, no drift.
    pub fn new(axis: Axis) -> Self {
        Self {
            p: 0.0,
            v: 0.0,
            axis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpsNoiseParams {
    /// Standard deviation of the second-derivative draw (m/step²).
    pub sigma: f64,
    /// Noise magnitude that sets the mean-reversion strength (m).
    pub p_max: f64,
    pub seed: u64,
    pub rate_hz: f64,
}

impl Default for GpsNoiseParams {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            p_max: 2.0,
            seed: 1,
            rate_hz: 10.0,
        }
    }
}

impl GpsNoiseParams {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(SensorError::InvalidParams(format!(
                "gps sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(SensorError::InvalidParams(format!(
                "gps p_max must be positive, got {}",
                self.p_max
            )));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(SensorError::InvalidParams(format!(
                "gps rate must be positive, got {}",
                self.rate_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MagnetometerParams {
    /// Heading noise standard deviation (rad).
    pub sigma_theta: f64,
    pub rate_hz: f64,
    pub seed: u64,
}

impl Default for MagnetometerParams {
    fn default() -> Self {
        Self {
            sigma_theta: 0.02,
            rate_hz: 10.0,
            seed: 2,
        }
    }
}

impl MagnetometerParams {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.sigma_theta.is_finite() && self.sigma_theta >= 0.0) {
            return Err(SensorError::InvalidParams(format!(
                "magnetometer sigma must be non-negative, got {}",
                self.sigma_theta
            )));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(SensorError::InvalidParams(format!(
                "magnetometer rate must be positive, got {}",
                self.rate_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    Gps(GeodeticCoord),
    /// Heading (rad).
    Magnetometer(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    Gps,
    Magnetometer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub timestamp: f64,
    pub payload: Payload,
}

impl Measurement {
    pub fn kind(&self) -> MeasurementKind {
        match self.payload {
            Payload::Gps(_) => MeasurementKind::Gps,
            Payload::Magnetometer(_) => MeasurementKind::Magnetometer,
        }
    }
}

/// Advances one noise chain by a single measurement period and returns the
/// new offset.
pub fn noise_step<G: GaussianSource>(
    state: &GpsNoiseState,
    params: &GpsNoiseParams,
    rng: &mut G,
) -> (GpsNoiseState, f64) {
    let mean = -state.p / params.p_max;
    let a = rng.gaussian(mean, params.sigma);
    let next = GpsNoiseState {
        p: state.p + state.v + a,
        v: state.v + a,
        axis: state.axis,
    };
    (next, next.p)
}

/// Superposes one step of each axis chain on the true planar position and
/// reports it as a geodetic fix.
#[allow(clippy::too_many_arguments)]
pub fn gps_measure<G: GaussianSource>(
    truth: &Vector2<f64>,
    chain_x: &mut GpsNoiseState,
    chain_y: &mut GpsNoiseState,
    rng_x: &mut G,
    rng_y: &mut G,
    frame: &LtpFrame,
    params: &GpsNoiseParams,
    t: f64,
) -> Measurement {
    let (next_x, px) = noise_step(chain_x, params, rng_x);
    let (next_y, py) = noise_step(chain_y, params, rng_y);
    *chain_x = next_x;
    *chain_y = next_y;
    let noisy = truth + Vector2::new(px, py);
    Measurement {
        timestamp: t,
        payload: Payload::Gps(from_ltp(frame, &noisy)),
    }
}

pub fn magnetometer_measure<G: GaussianSource>(
    theta_true: f64,
    params: &MagnetometerParams,
    rng: &mut G,
    t: f64,
) -> Measurement {
    let heading = if params.sigma_theta == 0.0 {
        theta_true
    } else {
        wrap_angle(rng.gaussian(theta_true, params.sigma_theta))
    };
    Measurement {
        timestamp: t,
        payload: Payload::Magnetometer(heading),
    }
}

/// GPS receiver owning its two noise chains and their random streams.
#[derive(Debug, Clone)]
pub struct GpsSensor {
    pub params: GpsNoiseParams,
    pub frame: LtpFrame,
    chain_x: GpsNoiseState,
    chain_y: GpsNoiseState,
    rng_x: NoiseStream,
    rng_y: NoiseStream,
}

impl GpsSensor {
    pub fn new(params: GpsNoiseParams, frame: LtpFrame) -> Self {
        Self {
            params,
            frame,
            chain_x: GpsNoiseState::new(Axis::X),
            chain_y: GpsNoiseState::new(Axis::Y),
            rng_x: NoiseStream::new(params.seed, Axis::X.stream_index()),
            rng_y: NoiseStream::new(params.seed, Axis::Y.stream_index()),
        }
    }

    pub fn measure(&mut self, truth: &Vector2<f64>, t: f64) -> Measurement {
        gps_measure(
            truth,
            &mut self.chain_x,
            &mut self.chain_y,
            &mut self.rng_x,
            &mut self.rng_y,
            &self.frame,
            &self.params,
            t,
        )
    }

    /// Current per-axis noise offsets.
    pub fn offsets(&self) -> Vector2<f64> {
        Vector2::new(self.chain_x.p, self.chain_y.p)
    }
}

#[derive(Debug, Clone)]
pub struct MagnetometerSensor {
    pub params: MagnetometerParams,
    rng: NoiseStream,
}

impl MagnetometerSensor {
    /// Stream index 2 keeps the heading stream apart from the GPS axes even
    /// when seeds coincide.
    pub fn new(params: MagnetometerParams) -> Self {
        Self {
            params,
            rng: NoiseStream::new(params.seed, 2),
        }
    }

    pub fn measure(&mut self, theta_true: f64, t: f64) -> Measurement {
        magnetometer_measure(theta_true, &self.params, &mut self.rng, t)
    }
}
