//! Reference trajectories: sampled poses with speed and feed-forward input.

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::vehicle::{steady_state_throttle, ControlInput, VehicleError, VehicleParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory argument {name} must be positive and finite, got {value}")]
    InvalidArgument { name: &'static str, value: f64 },
    #[error("waypoint {0} is not finite")]
    NonFiniteWaypoint(usize),
    #[error("trajectory needs at least two distinct waypoints")]
    TooFewPoints,
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
}

/// A point of the predefined ideal path, with the input that would keep the
/// model on it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub x_r: f64,
    pub y_r: f64,
    pub theta_r: f64,
    pub v_r: f64,
    pub u_r: ControlInput,
}

impl ReferencePoint {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x_r, self.y_r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<ReferencePoint>,
    arclength: Vec<f64>,
    closed: bool,
}

impl Trajectory {
    pub fn new(points: Vec<ReferencePoint>) -> Self {
        let mut arclength = Vec::with_capacity(points.len());
        let mut s = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                s += (p.position() - points[i - 1].position()).norm();
            }
            arclength.push(s);
        }
        Self {
            points,
            arclength,
            closed: false,
        }
    }

    /// Marks the path as a loop: the polyline joins the last point back to
    /// the first.
    pub fn closed(mut self) -> Self {
        self.closed = true;
        self
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn points(&self) -> &[ReferencePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn arclength(&self, index: usize) -> f64 {
        self.arclength[index]
    }

    pub fn total_length(&self) -> f64 {
        self.arclength.last().copied().unwrap_or(0.0)
    }

    /// Smallest index whose arc length reaches `s` (clamped to the end).
    pub fn index_at_arclength(&self, s: f64) -> usize {
        self.arclength
            .partition_point(|&a| a < s)
            .min(self.last_index())
    }

    /// Waypoint positions as a polyline, closed for loops.
    pub fn polyline(&self) -> Vec<Vector2<f64>> {
        let mut line: Vec<_> = self.points.iter().map(ReferencePoint::position).collect();
        if self.closed && !line.is_empty() {
            line.push(line[0]);
        }
        line
    }
}

/// Signed curvature of the circle through three points (positive when
/// turning left).
pub fn three_point_curvature(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> f64 {
    let ab = b - a;
    let bc = c - b;
    let ac = c - a;
    let denom = ab.norm() * bc.norm() * ac.norm();
    if denom <= f64::EPSILON {
        return 0.0;
    }
    2.0 * (ab.x * bc.y - ab.y * bc.x) / denom
}

fn check_positive(name: &'static str, value: f64) -> Result<(), TrajectoryError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(TrajectoryError::InvalidArgument { name, value })
    }
}

/// Fills in speed and feed-forward input from three-point curvature.
fn with_feedforward(
    poses: &[(Vector2<f64>, f64)],
    speed: f64,
    params: &VehicleParams,
) -> Result<Trajectory, TrajectoryError> {
    let n = poses.len();
    if n < 2 {
        return Err(TrajectoryError::TooFewPoints);
    }
    let alpha = steady_state_throttle(speed, params)?;
    let curvature: Vec<f64> = (0..n)
        .map(|i| {
            if n < 3 {
                return 0.0;
            }
            let mid = i.clamp(1, n - 2);
            three_point_curvature(poses[mid - 1].0, poses[mid].0, poses[mid + 1].0)
        })
        .collect();
    let points = poses
        .iter()
        .zip(curvature)
        .map(|(&(pos, theta), kappa)| ReferencePoint {
            x_r: pos.x,
            y_r: pos.y,
            theta_r: wrap_angle(theta),
            v_r: speed,
            u_r: ControlInput::new(
                alpha,
                (params.wheelbase * kappa)
                    .atan()
                    .clamp(-params.delta_max, params.delta_max),
            ),
        })
        .collect();
    Ok(Trajectory::new(points))
}

/// Counter-clockwise circle starting at the origin heading east, centred at
/// `(0, radius)`. One lap holds `round(2πr / spacing)` points; `laps` laps
/// are laid end to end.
pub fn generate_circle(
    radius: f64,
    speed: f64,
    spacing: f64,
    laps: usize,
    params: &VehicleParams,
) -> Result<Trajectory, TrajectoryError> {
    check_positive("radius", radius)?;
    check_positive("speed", speed)?;
    check_positive("spacing", spacing)?;
    let per_lap = ((2.0 * PI * radius / spacing).round() as usize).max(3);
    let step = 2.0 * PI / per_lap as f64;
    let poses: Vec<_> = (0..per_lap * laps.max(1))
        .map(|k| {
            let phi = (k % per_lap) as f64 * step;
            (
                Vector2::new(radius * phi.sin(), radius - radius * phi.cos()),
                phi,
            )
        })
        .collect();
    Ok(with_feedforward(&poses, speed, params)?.closed())
}

/// `y = A·sin(2πx/λ)` for `x ∈ [0, length]`, sampled at roughly constant arc
/// length.
pub fn generate_sinusoid(
    amplitude: f64,
    wavelength: f64,
    length: f64,
    speed: f64,
    spacing: f64,
    params: &VehicleParams,
) -> Result<Trajectory, TrajectoryError> {
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(TrajectoryError::InvalidArgument {
            name: "amplitude",
            value: amplitude,
        });
    }
    check_positive("wavelength", wavelength)?;
    check_positive("length", length)?;
    check_positive("speed", speed)?;
    check_positive("spacing", spacing)?;

    let k = 2.0 * PI / wavelength;
    let y = |x: f64| amplitude * (k * x).sin();
    let slope = |x: f64| amplitude * k * (k * x).cos();

    let mut poses = Vec::new();
    let mut x = 0.0;
    while x <= length {
        poses.push((Vector2::new(x, y(x)), slope(x).atan()));
        // midpoint estimate of dx for one arc-length step
        let half = x + 0.5 * spacing / (1.0 + slope(x).powi(2)).sqrt();
        x += spacing / (1.0 + slope(half).powi(2)).sqrt();
    }
    with_feedforward(&poses, speed, params)
}

/// Inserts evenly spaced points on every segment so that no gap exceeds
/// `spacing`. The original vertices are kept; repeated vertices are dropped.
pub fn resample_polyline(
    waypoints: &[Vector2<f64>],
    spacing: f64,
) -> Result<Vec<Vector2<f64>>, TrajectoryError> {
    check_positive("spacing", spacing)?;
    let mut out: Vec<Vector2<f64>> = Vec::new();
    for (i, &p) in waypoints.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(TrajectoryError::NonFiniteWaypoint(i));
        }
        match out.last() {
            None => out.push(p),
            Some(&prev) => {
                let d = (p - prev).norm();
                if d == 0.0 {
                    continue;
                }
                let pieces = (d / spacing).ceil().max(1.0) as usize;
                for k in 1..=pieces {
                    out.push(prev + (p - prev) * (k as f64 / pieces as f64));
                }
            }
        }
    }
    Ok(out)
}

/// Trajectory through user waypoints; headings follow the polyline.
pub fn from_waypoints(
    waypoints: &[Vector2<f64>],
    speed: f64,
    params: &VehicleParams,
) -> Result<Trajectory, TrajectoryError> {
    check_positive("speed", speed)?;
    let n = waypoints.len();
    if n < 2 {
        return Err(TrajectoryError::TooFewPoints);
    }
    let poses: Vec<_> = (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n {
                (waypoints[i], waypoints[i + 1])
            } else {
                (waypoints[i - 1], waypoints[i])
            };
            let d = b - a;
            (waypoints[i], d.y.atan2(d.x))
        })
        .collect();
    if waypoints.windows(2).all(|w| (w[1] - w[0]).norm() == 0.0) {
        return Err(TrajectoryError::TooFewPoints);
    }
    with_feedforward(&poses, speed, params)
}
