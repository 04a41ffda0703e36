//! Closed-loop navigation stack for a small ground vehicle.
//!
//! The crate bundles a 4-DOF bicycle model with DC-motor drive, a correlated
//! random-walk GPS noise model, an extended Kalman filter over GPS and
//! magnetometer corrections, and an error-dynamics model predictive tracker
//! backed by an in-crate ADMM quadratic program solver. [`sim`] wires them
//! together into deterministic, seeded scenario runs.

pub mod angle;
pub mod controller;
pub mod estimator;
pub mod geodesy;
pub mod log;
pub mod metrics;
pub mod qp;
pub mod sensors;
pub mod sim;
pub mod trajectory;
pub mod vehicle;

pub use angle::wrap_angle;
pub use controller::{ErrorState, MpcConfig, ReferencePoint};
pub use estimator::{EkfConfig, EstimatorState};
pub use geodesy::{GeodeticCoord, LtpFrame};
pub use sensors::{GpsNoiseParams, GpsNoiseState, MagnetometerParams, Measurement};
pub use sim::{Mode, RunLog, RunMetrics, Scenario};
pub use vehicle::{ControlInput, VehicleParams, VehicleState};
