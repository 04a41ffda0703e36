//! Closed-loop scenario engine.
//!
//! A run advances on an integer tick grid at the control rate. Each tick:
//! sensors due on this tick fire against plant truth, the filter predicts
//! with the previous input and applies any fresh corrections (GPS first,
//! then heading), the mode picks the input, a log row is written, and the
//! plant steps. Sensor rates must divide the control rate so that every
//! event lands on an exact tick.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{mpc_step, ControlError, MpcConfig, MpcMemory};
use crate::estimator::{
    predict, update_gps, update_heading, EkfConfig, EstimatorError, EstimatorState,
};
use crate::geodesy::{make_ltp, to_ltp, GeoError, GeodeticCoord};
use crate::metrics::{polyline_distance, ErrorStats};
use crate::qp::QpStatus;
use crate::sensors::{
    GpsNoiseParams, GpsSensor, MagnetometerParams, MagnetometerSensor, Payload, SensorError,
};
use crate::trajectory::{
    from_waypoints, generate_circle, generate_sinusoid, resample_polyline, ReferencePoint,
    Trajectory, TrajectoryError,
};
use crate::vehicle::{step, ControlInput, VehicleError, VehicleParams, VehicleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("run log is empty")]
    EmptyLog,
    #[error("run aborted before the first tick: {0}")]
    Aborted(String),
}

impl From<VehicleError> for SimError {
    fn from(e: VehicleError) -> Self {
        SimError::Config(e.to_string())
    }
}

impl From<SensorError> for SimError {
    fn from(e: SensorError) -> Self {
        SimError::Config(e.to_string())
    }
}

impl From<GeoError> for SimError {
    fn from(e: GeoError) -> Self {
        SimError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Constant open-loop input; the filter runs on its own.
    EkfOnly,
    /// The controller reads plant truth.
    MpcPrivileged,
    /// The controller reads the filter estimate.
    EkfMpc,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::EkfOnly => "ekf-only",
            Mode::MpcPrivileged => "mpc-privileged",
            Mode::EkfMpc => "ekf-mpc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    Circle {
        radius: f64,
        speed: f64,
        spacing: f64,
        laps: usize,
    },
    Sinusoid {
        amplitude: f64,
        wavelength: f64,
        length: f64,
        speed: f64,
        spacing: f64,
    },
    /// Polyline through the given points, resampled so consecutive
    /// references are at most `spacing` apart.
    Waypoints {
        points: Vec<Vector2<f64>>,
        speed: f64,
        spacing: f64,
    },
}

impl TrajectorySpec {
    pub fn build(&self, params: &VehicleParams) -> Result<Trajectory, TrajectoryError> {
        match self {
            TrajectorySpec::Circle {
                radius,
                speed,
                spacing,
                laps,
            } => generate_circle(*radius, *speed, *spacing, *laps, params),
            TrajectorySpec::Sinusoid {
                amplitude,
                wavelength,
                length,
                speed,
                spacing,
            } => generate_sinusoid(*amplitude, *wavelength, *length, *speed, *spacing, params),
            TrajectorySpec::Waypoints {
                points,
                speed,
                spacing,
            } => from_waypoints(&resample_polyline(points, *spacing)?, *speed, params),
        }
    }

    pub fn speed(&self) -> f64 {
        match self {
            TrajectorySpec::Circle { speed, .. }
            | TrajectorySpec::Sinusoid { speed, .. }
            | TrajectorySpec::Waypoints { speed, .. } => *speed,
        }
    }

    /// Time to traverse the path once at the reference speed; a circle
    /// counts all of its laps.
    pub fn nominal_duration(&self, trajectory: &Trajectory) -> f64 {
        let length = match self {
            TrajectorySpec::Circle { radius, laps, .. } => {
                2.0 * std::f64::consts::PI * radius * (*laps).max(1) as f64
            }
            _ => trajectory.total_length(),
        };
        length / self.speed()
    }
}

/// Multipliers applied to the plant's parameters only, to emulate a gap
/// between the controller's model and the vehicle it drives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantPerturbation {
    pub r_wheel: f64,
    pub i_wheel: f64,
    pub wheelbase: f64,
    pub gamma: f64,
    pub tau_0: f64,
    pub omega_0: f64,
    pub c_0: f64,
    pub c_1: f64,
}

impl Default for PlantPerturbation {
    fn default() -> Self {
        Self {
            r_wheel: 1.0,
            i_wheel: 1.0,
            wheelbase: 1.0,
            gamma: 1.0,
            tau_0: 1.0,
            omega_0: 1.0,
            c_0: 1.0,
            c_1: 1.0,
        }
    }
}

impl PlantPerturbation {
    pub fn apply(&self, p: &VehicleParams) -> VehicleParams {
        VehicleParams {
            r_wheel: p.r_wheel * self.r_wheel,
            i_wheel: p.i_wheel * self.i_wheel,
            wheelbase: p.wheelbase * self.wheelbase,
            gamma: p.gamma * self.gamma,
            tau_0: p.tau_0 * self.tau_0,
            omega_0: p.omega_0 * self.omega_0,
            c_0: p.c_0 * self.c_0,
            c_1: p.c_1 * self.c_1,
            delta_max: p.delta_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mode: Mode,
    pub trajectory: TrajectorySpec,
    /// Seconds; `None` traverses the trajectory once (closed-loop runs on an
    /// open path stop early when the controller reaches its last waypoint).
    pub duration: Option<f64>,
    pub control_hz: f64,
    pub vehicle: VehicleParams,
    pub plant: PlantPerturbation,
    pub origin: GeodeticCoord,
    pub heading_offset: f64,
    pub gps: GpsNoiseParams,
    pub magnetometer: MagnetometerParams,
    pub ekf: EkfConfig,
    pub mpc: MpcConfig,
    /// Plant start; `None` starts on the first waypoint at reference speed.
    pub initial_state: Option<VehicleState>,
    /// Open-loop input for ekf-only runs; `None` uses the first waypoint's
    /// feed-forward input.
    pub constant_input: Option<ControlInput>,
    /// Seconds excluded from the start of every metric.
    pub metrics_skip: f64,
}

impl Scenario {
    /// The reference circle: 5 m radius at 1 m/s, one lap, default noise.
    pub fn default_circle(mode: Mode) -> Self {
        let vehicle = VehicleParams::default();
        Self {
            mode,
            trajectory: TrajectorySpec::Circle {
                radius: 5.0,
                speed: 1.0,
                spacing: 0.1,
                laps: 1,
            },
            duration: None,
            control_hz: 10.0,
            vehicle,
            plant: PlantPerturbation::default(),
            origin: GeodeticCoord::new(43.0731, -89.4012, 266.0),
            heading_offset: 0.0,
            gps: GpsNoiseParams::default(),
            magnetometer: MagnetometerParams::default(),
            ekf: EkfConfig::default(),
            mpc: MpcConfig::for_vehicle(&vehicle),
            initial_state: None,
            constant_input: None,
            metrics_skip: 0.0,
        }
    }

    /// One period of a sinusoid, about 6.5 m × 1.8 m; the peak curvature
    /// stays inside the steering limit.
    pub fn default_sinusoid(mode: Mode) -> Self {
        Self {
            trajectory: TrajectorySpec::Sinusoid {
                amplitude: 0.9,
                wavelength: 6.5,
                length: 6.5,
                speed: 1.0,
                spacing: 0.1,
            },
            ..Self::default_circle(mode)
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    fn ticks_per(&self, rate_hz: f64, name: &str) -> Result<u64, SimError> {
        let ratio = self.control_hz / rate_hz;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "{name} rate {rate_hz} Hz must divide the control rate {} Hz",
                self.control_hz
            )));
        }
        Ok(rounded as u64)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.control_hz.is_finite() && self.control_hz > 0.0) {
            return Err(SimError::Config(format!(
                "control rate must be positive, got {}",
                self.control_hz
            )));
        }
        if let Some(d) = self.duration {
            if !(d.is_finite() && d > 0.0) {
                return Err(SimError::Config(format!(
                    "duration must be positive, got {d}"
                )));
            }
        }
        if !(self.metrics_skip.is_finite() && self.metrics_skip >= 0.0) {
            return Err(SimError::Config("metrics skip must be non-negative".into()));
        }
        self.vehicle.validate()?;
        self.plant.apply(&self.vehicle).validate()?;
        self.gps.validate()?;
        self.magnetometer.validate()?;
        self.ekf
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        self.mpc
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if (self.mpc.dt - self.dt()).abs() > 1e-12 {
            return Err(SimError::Config(format!(
                "controller dt {} does not match the control period {}",
                self.mpc.dt,
                self.dt()
            )));
        }
        self.ticks_per(self.gps.rate_hz, "gps")?;
        self.ticks_per(self.magnetometer.rate_hz, "magnetometer")?;
        make_ltp(self.origin, self.heading_offset)?;
        if let Some(q) = self.initial_state {
            if !q.is_finite() || q.v < 0.0 {
                return Err(SimError::Config(
                    "initial state must be finite with v >= 0".into(),
                ));
            }
        }
        if let Some(u) = self.constant_input {
            if !(0.0..=1.0).contains(&u.alpha) || u.delta.abs() > self.vehicle.delta_max {
                return Err(SimError::Config(
                    "constant input outside actuator limits".into(),
                ));
            }
        }
        self.trajectory.build(&self.vehicle)?;
        Ok(())
    }

    /// Number of control ticks the run spans.
    pub fn tick_count(&self, trajectory: &Trajectory) -> u64 {
        let duration = self
            .duration
            .unwrap_or_else(|| self.trajectory.nominal_duration(trajectory));
        (duration * self.control_hz).round().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpRecord {
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub tick: u64,
    pub t: f64,
    pub truth: VehicleState,
    /// GPS fix projected into the plane, when one arrived on this tick.
    pub measurement: Option<Vector2<f64>>,
    pub estimate: VehicleState,
    pub reference: Option<ReferencePoint>,
    pub input: ControlInput,
    pub qp: Option<QpRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    /// Set when a module error cut the run short.
    pub aborted: Option<String>,
}

impl RunLog {
    pub fn is_valid(&self) -> bool {
        self.aborted.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Raw GPS fix against plant truth, on ticks with a fix.
    pub measurement_vs_truth: Option<ErrorStats>,
    pub estimate_vs_truth: ErrorStats,
    /// Plant truth against the reference polyline.
    pub truth_vs_reference: ErrorStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trajectory: Trajectory,
    pub log: RunLog,
    pub metrics: RunMetrics,
}

enum Abort {
    Vehicle(VehicleError),
    Estimator(EstimatorError),
    Control(ControlError),
    Geo(GeoError),
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::Vehicle(e) => write!(f, "plant: {e}"),
            Abort::Estimator(e) => write!(f, "estimator: {e}"),
            Abort::Control(e) => write!(f, "controller: {e}"),
            Abort::Geo(e) => write!(f, "gps: {e}"),
        }
    }
}

/// Runs one scenario to completion (or to the first module error, in which
/// case the partial log is returned with `aborted` set).
pub fn run_scenario(s: &Scenario) -> Result<RunResult, SimError> {
    s.validate()?;
    let trajectory = s.trajectory.build(&s.vehicle)?;
    let frame = make_ltp(s.origin, s.heading_offset)?;
    let plant_params = s.plant.apply(&s.vehicle);
    let dt = s.dt();
    let gps_every = s.ticks_per(s.gps.rate_hz, "gps")?;
    let mag_every = s.ticks_per(s.magnetometer.rate_hz, "magnetometer")?;
    let n_ticks = s.tick_count(&trajectory);

    let first = trajectory.points()[0];
    let mut truth = s.initial_state.unwrap_or(VehicleState::new(
        first.x_r,
        first.y_r,
        first.theta_r,
        first.v_r,
    ));
    let mut est = EstimatorState::new(truth, s.ekf.p0);
    let constant = s.constant_input.unwrap_or(first.u_r);

    let mut gps = GpsSensor::new(s.gps, frame);
    let mut mag = MagnetometerSensor::new(s.magnetometer);
    let mut memory = MpcMemory::default();
    let mut cursor = 0usize;
    let mut last_input: Option<ControlInput> = None;

    let mut log = RunLog {
        rows: Vec::with_capacity(n_ticks as usize),
        aborted: None,
    };

    for tick in 0..n_ticks {
        let t = tick as f64 * dt;
        let outcome = (|| -> Result<LogRow, Abort> {
            let mut measurement = None;
            if tick % gps_every == 0 {
                let m = gps.measure(&Vector2::new(truth.x, truth.y), t);
                if let Payload::Gps(fix) = m.payload {
                    measurement = Some(to_ltp(&frame, &fix).map_err(Abort::Geo)?);
                }
            }
            let mut heading = None;
            if tick % mag_every == 0 {
                if let Payload::Magnetometer(h) = mag.measure(truth.theta, t).payload {
                    heading = Some(h);
                }
            }

            if let Some(u) = last_input {
                est = predict(&est, &u, dt, &s.vehicle, &s.ekf).map_err(Abort::Estimator)?;
            }
            if let Some(z) = measurement {
                est = update_gps(&est, &z, &s.ekf).map_err(Abort::Estimator)?;
            }
            if let Some(h) = heading {
                est = update_heading(&est, h, &s.ekf).map_err(Abort::Estimator)?;
            }

            let (input, reference, qp) = match s.mode {
                Mode::EkfOnly => (constant, None, None),
                Mode::MpcPrivileged | Mode::EkfMpc => {
                    let observed = if s.mode == Mode::MpcPrivileged {
                        truth
                    } else {
                        est.q_hat
                    };
                    let out = mpc_step(&observed, &trajectory, cursor, &memory, &s.mpc, &s.vehicle)
                        .map_err(Abort::Control)?;
                    cursor = out.cursor;
                    memory = out.memory;
                    let d = out.diagnostics;
                    (
                        out.input,
                        Some(d.reference),
                        Some(QpRecord {
                            status: d.status,
                            iterations: d.iterations,
                            objective: d.objective,
                        }),
                    )
                }
            };

            let row = LogRow {
                tick,
                t,
                truth,
                measurement,
                estimate: est.q_hat,
                reference,
                input,
                qp,
            };
            truth = step(&truth, &input, dt, &plant_params).map_err(Abort::Vehicle)?;
            last_input = Some(input);
            Ok(row)
        })();

        match outcome {
            Ok(row) => {
                log.rows.push(row);
                // an open path is done once the controller reaches its end
                let traversed = s.duration.is_none()
                    && !trajectory.is_closed()
                    && s.mode != Mode::EkfOnly
                    && cursor == trajectory.last_index();
                if traversed {
                    break;
                }
            }
            Err(e) => {
                log.aborted = Some(format!("tick {tick}: {e}"));
                break;
            }
        }
    }

    if log.rows.is_empty() {
        return Err(SimError::Aborted(log.aborted.unwrap_or_default()));
    }
    let metrics = compute_metrics(&log, &trajectory, s.metrics_skip)?;
    Ok(RunResult {
        trajectory,
        log,
        metrics,
    })
}

/// Error statistics over the log, ignoring rows earlier than `skip` seconds.
pub fn compute_metrics(
    log: &RunLog,
    trajectory: &Trajectory,
    skip: f64,
) -> Result<RunMetrics, SimError> {
    let rows: Vec<&LogRow> = log.rows.iter().filter(|r| r.t >= skip - 1e-9).collect();
    if rows.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let polyline = trajectory.polyline();
    let position = |q: &VehicleState| Vector2::new(q.x, q.y);

    let measurement_vs_truth = ErrorStats::from_distances(
        rows.iter()
            .filter_map(|r| r.measurement.map(|m| (m - position(&r.truth)).norm())),
    );
    let estimate_vs_truth = ErrorStats::from_distances(
        rows.iter()
            .map(|r| (position(&r.estimate) - position(&r.truth)).norm()),
    )
    .ok_or(SimError::EmptyLog)?;
    let truth_vs_reference = ErrorStats::from_distances(
        rows.iter()
            .map(|r| polyline_distance(&position(&r.truth), &polyline)),
    )
    .ok_or(SimError::EmptyLog)?;
    Ok(RunMetrics {
        measurement_vs_truth,
        estimate_vs_truth,
        truth_vs_reference,
    })
}

/// Outcome of one replicate in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRun {
    pub index: usize,
    pub gps_seed: u64,
    pub magnetometer_seed: u64,
    pub metrics: Result<RunMetrics, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub completed: usize,
    /// Runs where the filter's average error beat the raw fixes'.
    pub ekf_avg_wins: usize,
    /// Runs where the filter's maximum error beat the raw fixes'.
    pub ekf_max_wins: usize,
    pub mean_ekf_avg: f64,
    pub mean_meas_avg: f64,
    pub mean_ekf_max: f64,
    pub mean_meas_max: f64,
    pub mean_tracking_avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub runs: Vec<BatchRun>,
    pub summary: BatchSummary,
}

/// Runs `n_runs` replicates that differ only in sensor seeds: replicate `i`
/// uses the scenario seeds plus `i·seed_stride`. Replicates run in parallel
/// and are reported in index order.
pub fn run_batch(s: &Scenario, n_runs: usize, seed_stride: u64) -> Result<BatchResult, SimError> {
    if n_runs == 0 {
        return Err(SimError::Config("a batch needs at least one run".into()));
    }
    s.validate()?;
    let runs: Vec<BatchRun> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut replicate = s.clone();
            let offset = seed_stride.wrapping_mul(i as u64);
            replicate.gps.seed = s.gps.seed.wrapping_add(offset);
            replicate.magnetometer.seed = s.magnetometer.seed.wrapping_add(offset);
            let metrics = run_scenario(&replicate)
                .map_err(|e| e.to_string())
                .and_then(|r| match r.log.aborted {
                    Some(msg) => Err(msg),
                    None => Ok(r.metrics),
                });
            BatchRun {
                index: i,
                gps_seed: replicate.gps.seed,
                magnetometer_seed: replicate.magnetometer.seed,
                metrics,
            }
        })
        .collect();
    let summary = summarize(&runs);
    Ok(BatchResult { runs, summary })
}

fn summarize(runs: &[BatchRun]) -> BatchSummary {
    let ok: Vec<&RunMetrics> = runs
        .iter()
        .filter_map(|r| r.metrics.as_ref().ok())
        .collect();
    let mut summary = BatchSummary {
        runs: runs.len(),
        completed: ok.len(),
        ..Default::default()
    };
    if ok.is_empty() {
        return summary;
    }
    let n = ok.len() as f64;
    for m in &ok {
        let ekf = m.estimate_vs_truth;
        summary.mean_ekf_avg += ekf.avg_error / n;
        summary.mean_ekf_max += ekf.max_error / n;
        summary.mean_tracking_avg += m.truth_vs_reference.avg_error / n;
        if let Some(meas) = m.measurement_vs_truth {
            summary.mean_meas_avg += meas.avg_error / n;
            summary.mean_meas_max += meas.max_error / n;
            if ekf.avg_error < meas.avg_error {
                summary.ekf_avg_wins += 1;
            }
            if ekf.max_error < meas.max_error {
                summary.ekf_max_wins += 1;
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut s: Scenario) -> Scenario {
        s.gps.sigma = 0.0;
        s.magnetometer.sigma_theta = 0.0;
        s
    }

    #[test]
    fn defaults_validate() {
        Scenario::default_circle(Mode::EkfOnly).validate().unwrap();
        Scenario::default_sinusoid(Mode::EkfMpc).validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_rates() {
        let mut s = Scenario::default_circle(Mode::EkfOnly);
        s.gps.rate_hz = 3.0;
        assert!(matches!(s.validate(), Err(SimError::Config(_))));
        s = Scenario::default_circle(Mode::EkfOnly);
        s.gps.rate_hz = 20.0;
        assert!(s.validate().is_err());
        s = Scenario::default_circle(Mode::EkfOnly);
        s.control_hz = 0.0;
        assert!(s.validate().is_err());
        s = Scenario::default_circle(Mode::EkfOnly);
        s.duration = Some(-1.0);
        assert!(s.validate().is_err());
        s = Scenario::default_circle(Mode::EkfOnly);
        s.trajectory = TrajectorySpec::Circle {
            radius: f64::NAN,
            speed: 1.0,
            spacing: 0.1,
            laps: 1,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn one_row_per_tick_with_increasing_time() {
        let mut s = Scenario::default_circle(Mode::EkfOnly);
        s.duration = Some(3.0);
        let r = run_scenario(&s).unwrap();
        assert_eq!(r.log.rows.len(), 30);
        assert!(r.log.is_valid());
        for w in r.log.rows.windows(2) {
            assert!(w[1].t > w[0].t);
            assert_eq!(w[1].tick, w[0].tick + 1);
        }
    }

    #[test]
    fn gps_rows_follow_rate() {
        for (rate, expected) in [(10.0, 100), (5.0, 50), (2.0, 20), (1.0, 10)] {
            let mut s = Scenario::default_circle(Mode::EkfOnly);
            s.duration = Some(10.0);
            s.gps.rate_hz = rate;
            let r = run_scenario(&s).unwrap();
            let fixes = r
                .log
                .rows
                .iter()
                .filter(|row| row.measurement.is_some())
                .count() as i64;
            assert!((fixes - expected).abs() <= 1, "rate {rate}: {fixes}");
        }
    }

    #[test]
    fn noiseless_filter_tracks_truth() {
        let s = quiet(Scenario::default_circle(Mode::EkfOnly));
        let r = run_scenario(&s).unwrap();
        assert!(r.metrics.estimate_vs_truth.avg_error < 1e-6);
        assert!(r.metrics.measurement_vs_truth.unwrap().max_error < 1e-6);
    }

    #[test]
    fn constant_input_traces_the_circle() {
        let s = quiet(Scenario::default_circle(Mode::EkfOnly));
        let r = run_scenario(&s).unwrap();
        // Euler drift over one lap stays small at dt = 0.1
        assert!(
            r.metrics.truth_vs_reference.max_error < 0.2,
            "{:?}",
            r.metrics
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let mut s = Scenario::default_circle(Mode::EkfMpc);
        s.duration = Some(5.0);
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn metrics_skip_and_empty() {
        let mut s = Scenario::default_circle(Mode::EkfOnly);
        s.duration = Some(2.0);
        let r = run_scenario(&s).unwrap();
        assert_eq!(
            compute_metrics(&r.log, &r.trajectory, 1.0)
                .unwrap()
                .estimate_vs_truth
                .samples,
            10
        );
        assert_eq!(
            compute_metrics(&RunLog::default(), &r.trajectory, 0.0),
            Err(SimError::EmptyLog)
        );
    }

    #[test]
    fn single_run_batch_matches_run() {
        let mut s = Scenario::default_circle(Mode::EkfOnly);
        s.duration = Some(4.0);
        let batch = run_batch(&s, 1, 17).unwrap();
        let single = run_scenario(&s).unwrap();
        assert_eq!(batch.runs[0].metrics, Ok(single.metrics));
        assert_eq!(batch.summary.completed, 1);
        assert_eq!(
            batch.summary.mean_ekf_avg,
            single.metrics.estimate_vs_truth.avg_error
        );
        assert!(run_batch(&s, 0, 1).is_err());
    }

    #[test]
    fn plant_perturbation_scales_plant_only() {
        let p = VehicleParams::default();
        let mut pert = PlantPerturbation::default();
        assert_eq!(pert.apply(&p), p);
        pert.tau_0 = 0.8;
        assert_eq!(pert.apply(&p).tau_0, 0.8 * p.tau_0);
    }
}
