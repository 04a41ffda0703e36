//! TOML scenario files.
//!
//! Every table is optional and falls back to the library defaults; unknown
//! keys are rejected. Matrices are given by their diagonals. Relative paths
//! (`output_dir`, waypoint files) resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use navsim::controller::MpcConfig;
use navsim::qp::QpSettings;
use navsim::sim::{PlantPerturbation, TrajectorySpec};
use navsim::{
    ControlInput, EkfConfig, GeodeticCoord, GpsNoiseParams, MagnetometerParams, Mode, Scenario,
    VehicleParams, VehicleState,
};
use serde::Deserialize;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Schema { path: PathBuf, found: u32 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    // checked by `load` before the full parse
    #[allow(dead_code)]
    pub schema_version: u32,
    pub mode: Mode,
    /// Seconds; omit to traverse the trajectory once.
    pub duration: Option<f64>,
    #[serde(default = "default_control_hz")]
    pub control_hz: f64,
    #[serde(default)]
    pub metrics_skip: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub plot: bool,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub plant: PlantPerturbation,
    #[serde(default)]
    pub origin: OriginConfig,
    #[serde(default)]
    pub gps: GpsNoiseParams,
    #[serde(default)]
    pub magnetometer: MagnetometerParams,
    #[serde(default)]
    pub ekf: EkfFile,
    #[serde(default)]
    pub mpc: MpcFile,
    pub initial_state: Option<StateFile>,
    pub constant_input: Option<InputFile>,
}

fn default_control_hz() -> f64 {
    10.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Circle {
        radius: f64,
        speed: f64,
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_laps")]
        laps: usize,
    },
    Sinusoid {
        amplitude: f64,
        wavelength: f64,
        length: f64,
        speed: f64,
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
    /// Either inline `points` or a CSV `file` with `x,y` columns.
    Waypoints {
        points: Option<Vec<[f64; 2]>>,
        file: Option<PathBuf>,
        speed: f64,
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
}

fn default_spacing() -> f64 {
    0.1
}

fn default_laps() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OriginConfig {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    /// Radians between the local x axis and magnetic north.
    pub heading_offset: f64,
}

impl Default for OriginConfig {
    fn default() -> Self {
        Self {
            lat: 43.0731,
            lon: -89.4012,
            alt: 266.0,
            heading_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfFile {
    pub p0: [f64; 4],
    pub q: [f64; 4],
    pub r_gps: [f64; 2],
    pub r_mag: f64,
}

impl Default for EkfFile {
    fn default() -> Self {
        let d = EkfConfig::default();
        Self {
            p0: diag4(&d.p0),
            q: diag4(&d.q_process),
            r_gps: [d.r_gps[(0, 0)], d.r_gps[(1, 1)]],
            r_mag: d.r_mag,
        }
    }
}

fn diag4(m: &Matrix4<f64>) -> [f64; 4] {
    [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(3, 3)]]
}

/// Controller settings; the input box defaults to the vehicle's limits.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcFile {
    pub horizon: usize,
    pub q_weight: [f64; 4],
    pub r_weight: [f64; 2],
    pub error_lower: [f64; 4],
    pub error_upper: [f64; 4],
    pub input_lower: Option<[f64; 2]>,
    pub input_upper: Option<[f64; 2]>,
    pub lookahead: usize,
    pub search_window: usize,
    pub solver: QpSettings,
}

impl Default for MpcFile {
    fn default() -> Self {
        let d = MpcConfig::for_vehicle(&VehicleParams::default());
        Self {
            horizon: d.horizon,
            q_weight: diag4(&d.q_weight),
            r_weight: [d.r_weight[(0, 0)], d.r_weight[(1, 1)]],
            error_lower: d.error_lower,
            error_upper: d.error_upper,
            input_lower: None,
            input_upper: None,
            lookahead: d.lookahead,
            search_window: d.search_window,
            solver: d.solver,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    pub alpha: f64,
    pub delta: f64,
}

/// Command-line values that shadow the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub gps_rate: Option<f64>,
}

/// A parsed config, with paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: ConfigFile,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.file.output_dir)
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    // check the version before the full parse so old files get a clear error
    #[derive(Deserialize)]
    struct Version {
        schema_version: Option<u32>,
    }
    let parse_err = |e: toml::de::Error| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let version: Version = toml::from_str(&text).map_err(parse_err)?;
    match version.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(ConfigError::Schema {
                path: path.to_path_buf(),
                found,
            })
        }
        None => {
            return Err(ConfigError::Parse {
                path: path.to_path_buf(),
                message: "missing schema_version".into(),
            })
        }
    }
    let file: ConfigFile = toml::from_str(&text).map_err(parse_err)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { file, base_dir })
}

fn read_waypoints(path: &Path) -> Result<Vec<Vector2<f64>>, ConfigError> {
    let invalid = |msg: String| ConfigError::Invalid(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| invalid(e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(invalid("expected a header row `x,y`".into()));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| invalid(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| invalid(format!("line {line}: `{}` is not a number", &record[i])))
        };
        points.push(Vector2::new(parse(0)?, parse(1)?));
    }
    Ok(points)
}

impl LoadedConfig {
    /// Builds and validates the scenario, applying overrides first.
    pub fn scenario(&self, overrides: &Overrides) -> Result<Scenario, ConfigError> {
        let f = &self.file;
        let trajectory = match &f.trajectory {
            TrajectoryConfig::Circle {
                radius,
                speed,
                spacing,
                laps,
            } => TrajectorySpec::Circle {
                radius: *radius,
                speed: *speed,
                spacing: *spacing,
                laps: *laps,
            },
            TrajectoryConfig::Sinusoid {
                amplitude,
                wavelength,
                length,
                speed,
                spacing,
            } => TrajectorySpec::Sinusoid {
                amplitude: *amplitude,
                wavelength: *wavelength,
                length: *length,
                speed: *speed,
                spacing: *spacing,
            },
            TrajectoryConfig::Waypoints {
                points,
                file,
                speed,
                spacing,
            } => {
                let points = match (points, file) {
                    (Some(p), None) => p.iter().map(|&[x, y]| Vector2::new(x, y)).collect(),
                    (None, Some(file)) => read_waypoints(&self.base_dir.join(file))?,
                    _ => {
                        return Err(ConfigError::Invalid(
                            "waypoint trajectories need exactly one of `points` or `file`".into(),
                        ))
                    }
                };
                TrajectorySpec::Waypoints {
                    points,
                    speed: *speed,
                    spacing: *spacing,
                }
            }
        };

        let mut gps = f.gps;
        let mut magnetometer = f.magnetometer;
        if let Some(seed) = overrides.seed {
            gps.seed = seed;
            magnetometer.seed = seed.wrapping_add(1);
        }
        if let Some(rate) = overrides.gps_rate {
            gps.rate_hz = rate;
        }

        let vehicle = f.vehicle;
        let defaults = MpcConfig::for_vehicle(&vehicle);
        let m = &f.mpc;
        let mpc = MpcConfig {
            horizon: m.horizon,
            dt: 1.0 / f.control_hz,
            q_weight: Matrix4::from_diagonal(&Vector4::from(m.q_weight)),
            r_weight: Matrix2::from_diagonal(&Vector2::from(m.r_weight)),
            error_lower: m.error_lower,
            error_upper: m.error_upper,
            input_lower: m.input_lower.unwrap_or(defaults.input_lower),
            input_upper: m.input_upper.unwrap_or(defaults.input_upper),
            lookahead: m.lookahead,
            search_window: m.search_window,
            solver: m.solver,
        };

        let scenario = Scenario {
            mode: f.mode,
            trajectory,
            duration: overrides.duration.or(f.duration),
            control_hz: f.control_hz,
            vehicle,
            plant: f.plant,
            origin: GeodeticCoord::new(f.origin.lat, f.origin.lon, f.origin.alt),
            heading_offset: f.origin.heading_offset,
            gps,
            magnetometer,
            ekf: EkfConfig::from_diagonals(f.ekf.p0, f.ekf.q, f.ekf.r_gps, f.ekf.r_mag),
            mpc,
            initial_state: f
                .initial_state
                .map(|s| VehicleState::new(s.x, s.y, s.theta, s.v)),
            constant_input: f
                .constant_input
                .map(|u| ControlInput::new(u.alpha, u.delta)),
            metrics_skip: f.metrics_skip,
        };
        scenario
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(scenario)
    }
}
