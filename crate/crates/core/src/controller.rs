//! Error-dynamics model predictive tracking controller.
//!
//! Each tick the controller picks a reference point ahead of the vehicle,
//! expresses the tracking error in the vehicle body frame, linearizes the
//! error dynamics along the horizon, stacks the finite-horizon problem into
//! a QP and applies the first optimal input.
//!
//! The error dynamics are linearized about the reference input, so the
//! stacked dynamics read `e_{k+1} = A_k e_k + B_k (u_k − u_r,k)`. Zero error
//! with the reference input applied is then a fixed point of the prediction.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::qp::{
    solve_qp, HorizonLayout, QpError, QpProblem, QpSettings, QpSolution, QpStatus, WarmStart,
};
use crate::vehicle::{ControlInput, VehicleParams, VehicleState};

pub use crate::trajectory::{ReferencePoint, Trajectory};

const STATE_DIM: usize = 4;
const INPUT_DIM: usize = 2;

/// Per-step `A_k` and `B_k` over a horizon.
pub type HorizonModel = (Vec<Matrix4<f64>>, Vec<Matrix4x2<f64>>);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("reference trajectory is empty")]
    EmptyTrajectory,
    #[error("cursor {cursor} is past the end of a {len}-point trajectory")]
    CursorOutOfRange { cursor: usize, len: usize },
    #[error("steering angle {0} rad is at or beyond the tangent singularity")]
    SteeringSingularity(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Tracking error in the vehicle body frame: longitudinal, lateral, heading
/// and speed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
}

impl ErrorState {
    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.e1, self.e2, self.e3, self.e4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q_weight: Matrix4<f64>,
    pub r_weight: Matrix2<f64>,
    pub error_lower: [f64; 4],
    pub error_upper: [f64; 4],
    pub input_lower: [f64; 2],
    pub input_upper: [f64; 2],
    /// Points skipped past the nearest waypoint.
    pub lookahead: usize,
    /// Points scanned forward from the cursor when searching for the nearest
    /// waypoint.
    pub search_window: usize,
    pub solver: QpSettings,
}

impl MpcConfig {
    /// Defaults whose input box matches the vehicle's actuator limits.
    pub fn for_vehicle(params: &VehicleParams) -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            q_weight: Matrix4::from_diagonal(&Vector4::new(10.0, 10.0, 5.0, 1.0)),
            r_weight: Matrix2::identity(),
            error_lower: [-10.0, -10.0, -std::f64::consts::PI, -5.0],
            error_upper: [10.0, 10.0, std::f64::consts::PI, 5.0],
            input_lower: [0.0, -params.delta_max],
            input_upper: [1.0, params.delta_max],
            lookahead: 3,
            search_window: 100,
            solver: QpSettings::default(),
        }
    }

    // negated comparisons so NaN bounds are rejected
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |msg: String| Err(ControlError::InvalidConfig(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let q = &self.q_weight;
        if !q.iter().all(|x| x.is_finite()) || (q - q.transpose()).amax() > 1e-12 {
            return bad("state weight must be finite and symmetric".into());
        }
        if q.symmetric_eigenvalues().min() < -1e-12 {
            return bad("state weight must be positive semi-definite".into());
        }
        let r = &self.r_weight;
        if !r.iter().all(|x| x.is_finite()) || (r - r.transpose()).amax() > 1e-12 {
            return bad("input weight must be finite and symmetric".into());
        }
        if r.symmetric_eigenvalues().min() <= 0.0 {
            return bad("input weight must be positive definite".into());
        }
        for i in 0..4 {
            if !(self.error_lower[i] <= self.error_upper[i]) {
                return bad(format!("error box component {i} is empty"));
            }
        }
        for i in 0..2 {
            if !(self.input_lower[i] <= self.input_upper[i])
                || !self.input_lower[i].is_finite()
                || !self.input_upper[i].is_finite()
            {
                return bad(format!("input box component {i} is empty or unbounded"));
            }
        }
        if self.search_window == 0 {
            return bad("search window must be at least 1".into());
        }
        let s = &self.solver;
        if !(s.rho > 0.0 && s.sigma > 0.0 && s.alpha > 0.0 && s.alpha < 2.0 && s.tolerance > 0.0)
            || s.max_iterations == 0
        {
            return bad("solver settings out of range".into());
        }
        Ok(())
    }

    pub fn clamp_input(&self, u: &ControlInput) -> ControlInput {
        ControlInput {
            alpha: u.alpha.clamp(self.input_lower[0], self.input_upper[0]),
            delta: u.delta.clamp(self.input_lower[1], self.input_upper[1]),
        }
    }
}

/// Body-frame error of `q` against the reference pose.
pub fn error_state(q: &VehicleState, reference: &ReferencePoint) -> ErrorState {
    let (sin, cos) = q.theta.sin_cos();
    let dx = reference.x_r - q.x;
    let dy = reference.y_r - q.y;
    ErrorState {
        e1: cos * dx + sin * dy,
        e2: -sin * dx + cos * dy,
        e3: wrap_angle(reference.theta_r - q.theta),
        e4: reference.v_r - q.v,
    }
}

/// Nearest waypoint at or after `cursor` (within the search window; the
/// smallest index wins ties), advanced by the lookahead. Returns the chosen
/// reference and the nearest index as the new cursor.
pub fn reference_lookup(
    q: &VehicleState,
    trajectory: &Trajectory,
    cursor: usize,
    lookahead: usize,
    search_window: usize,
) -> Result<(ReferencePoint, usize), ControlError> {
    if trajectory.is_empty() {
        return Err(ControlError::EmptyTrajectory);
    }
    if cursor >= trajectory.len() {
        return Err(ControlError::CursorOutOfRange {
            cursor,
            len: trajectory.len(),
        });
    }
    let pos = Vector2::new(q.x, q.y);
    let end = cursor
        .saturating_add(search_window)
        .min(trajectory.last_index());
    let mut best = cursor;
    let mut best_dist = f64::INFINITY;
    for (i, p) in trajectory.points()[cursor..=end].iter().enumerate() {
        let d = (p.position() - pos).norm_squared();
        if d < best_dist {
            best_dist = d;
            best = cursor + i;
        }
    }
    let chosen = (best + lookahead).min(trajectory.last_index());
    Ok((trajectory.points()[chosen], best))
}

/// References for each stage of the horizon, spaced by the distance the
/// reference speed covers in one step.
pub fn horizon_references(
    trajectory: &Trajectory,
    start: usize,
    horizon: usize,
    dt: f64,
) -> Vec<ReferencePoint> {
    let s0 = trajectory.arclength(start);
    let pts = trajectory.points();
    let mut refs = Vec::with_capacity(horizon + 1);
    let mut s = s0;
    let mut idx = start;
    refs.push(pts[start]);
    for _ in 0..horizon {
        s += pts[idx].v_r * dt;
        idx = trajectory.index_at_arclength(s).max(idx);
        refs.push(pts[idx]);
    }
    refs
}

/// Discrete error-dynamics matrices along the horizon.
///
/// `v_k` comes from each reference's speed and `δ_k` from `steering`
/// (the shifted previous solution, or the reference steering on a cold
/// start). The error-dependent entries are frozen at `e0`.
pub fn linearize_horizon(
    e0: &ErrorState,
    refs: &[ReferencePoint],
    steering: &[f64],
    config: &MpcConfig,
    params: &VehicleParams,
) -> Result<HorizonModel, ControlError> {
    let n = config.horizon;
    if refs.len() < n || steering.len() < n {
        return Err(ControlError::Dimension(format!(
            "horizon {n} needs {n} references and steering angles, got {} and {}",
            refs.len(),
            steering.len()
        )));
    }
    let dt = config.dt;
    let l = params.wheelbase;
    let speed_decay =
        -(params.c_1 * params.omega_0 + params.tau_0) / (params.i_wheel * params.omega_0);
    let throttle_gain = -params.tau_0 * params.r_wheel * params.gamma / params.i_wheel;
    let (sin_e3, cos_e3) = e0.e3.sin_cos();

    let mut a_seq = Vec::with_capacity(n);
    let mut b_seq = Vec::with_capacity(n);
    for k in 0..n {
        let delta = steering[k];
        if !delta.is_finite() || delta.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(ControlError::SteeringSingularity(delta));
        }
        let v_k = refs[k].v_r;
        let v_r = refs[k].v_r;
        let yaw_rate = v_k * delta.tan() / l;
        let sec2 = 1.0 / (l * delta.cos().powi(2));

        let mut a = Matrix4::zeros();
        a[(0, 1)] = yaw_rate;
        a[(0, 2)] = -v_r * sin_e3;
        a[(1, 0)] = -yaw_rate;
        a[(1, 2)] = v_r * cos_e3;
        a[(3, 3)] = speed_decay;
        a_seq.push(Matrix4::identity() + a * dt);

        let mut b = Matrix4x2::zeros();
        b[(0, 1)] = v_k * e0.e2 * sec2;
        b[(1, 1)] = -v_k * e0.e1 * sec2;
        b[(2, 1)] = -v_k * sec2;
        b[(3, 0)] = throttle_gain;
        b_seq.push(b * dt);
    }
    Ok((a_seq, b_seq))
}

/// Stacks the horizon problem over `z = [e_0..e_N, u_0..u_{N−1}]`.
///
/// Rows: `e_0` pinned to the measured error, the dynamics equalities, a box
/// on `e_1..e_N` and a box on every input.
pub fn build_qp(
    e0: &ErrorState,
    a_seq: &[Matrix4<f64>],
    b_seq: &[Matrix4x2<f64>],
    refs: &[ReferencePoint],
    config: &MpcConfig,
) -> Result<QpProblem, ControlError> {
    let n = config.horizon;
    if a_seq.len() != n || b_seq.len() != n || refs.len() < n {
        return Err(ControlError::Dimension(format!(
            "horizon {n} got {} A, {} B and {} references",
            a_seq.len(),
            b_seq.len(),
            refs.len()
        )));
    }
    let layout = HorizonLayout {
        horizon: n,
        state_dim: STATE_DIM,
        input_dim: INPUT_DIM,
    };
    let n_vars = layout.n_vars();
    let n_rows = STATE_DIM * (n + 1) + STATE_DIM * n + INPUT_DIM * n;

    let mut hessian = DMatrix::zeros(n_vars, n_vars);
    let mut linear = DVector::zeros(n_vars);
    let mut constant = 0.0;
    for k in 0..=n {
        let i = layout.state_index(k);
        hessian
            .fixed_view_mut::<4, 4>(i, i)
            .copy_from(&config.q_weight);
    }
    for (k, reference) in refs.iter().take(n).enumerate() {
        let i = layout.input_index(k);
        hessian
            .fixed_view_mut::<2, 2>(i, i)
            .copy_from(&config.r_weight);
        let u_r = Vector2::new(reference.u_r.alpha, reference.u_r.delta);
        linear
            .fixed_rows_mut::<2>(i)
            .copy_from(&(-2.0 * config.r_weight * u_r));
        constant += (u_r.transpose() * config.r_weight * u_r)[(0, 0)];
    }

    let mut a = DMatrix::zeros(n_rows, n_vars);
    let mut lower = DVector::zeros(n_rows);
    let mut upper = DVector::zeros(n_rows);

    let e0v = e0.to_vector();
    for j in 0..STATE_DIM {
        a[(j, j)] = 1.0;
        lower[j] = e0v[j];
        upper[j] = e0v[j];
    }

    for k in 0..n {
        let row = layout.dynamics_row() + STATE_DIM * k;
        let next = layout.state_index(k + 1);
        let cur = layout.state_index(k);
        let inp = layout.input_index(k);
        a.fixed_view_mut::<4, 4>(row, next)
            .copy_from(&Matrix4::identity());
        a.fixed_view_mut::<4, 4>(row, cur).copy_from(&(-a_seq[k]));
        a.fixed_view_mut::<4, 2>(row, inp).copy_from(&(-b_seq[k]));
        let u_r = Vector2::new(refs[k].u_r.alpha, refs[k].u_r.delta);
        let offset = -(b_seq[k] * u_r);
        for j in 0..STATE_DIM {
            lower[row + j] = offset[j];
            upper[row + j] = offset[j];
        }
    }

    let mut row = layout.box_row();
    for k in 1..=n {
        let col = layout.state_index(k);
        for j in 0..STATE_DIM {
            a[(row, col + j)] = 1.0;
            lower[row] = config.error_lower[j];
            upper[row] = config.error_upper[j];
            row += 1;
        }
    }
    for k in 0..n {
        let col = layout.input_index(k);
        for j in 0..INPUT_DIM {
            a[(row, col + j)] = 1.0;
            lower[row] = config.input_lower[j];
            upper[row] = config.input_upper[j];
            row += 1;
        }
    }
    debug_assert_eq!(row, n_rows);

    Ok(QpProblem {
        hessian,
        linear,
        constant,
        constraints: a,
        lower,
        upper,
        layout: Some(layout),
    })
}

/// Optimal inputs `u_0..u_{N−1}` read back from a QP solution.
pub fn solution_inputs(solution: &QpSolution, layout: &HorizonLayout) -> Vec<ControlInput> {
    (0..layout.horizon)
        .map(|k| {
            let i = layout.input_index(k);
            ControlInput::new(solution.x[i], solution.x[i + 1])
        })
        .collect()
}

/// What the controller carries from one tick to the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MpcMemory {
    pub last_input: Option<ControlInput>,
    pub last_solution: Option<QpSolution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcDiagnostics {
    pub reference: ReferencePoint,
    pub error: ErrorState,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    /// The solver did not certify a solution and the last input was held.
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub input: ControlInput,
    pub cursor: usize,
    pub diagnostics: MpcDiagnostics,
    pub memory: MpcMemory,
}

/// Moves every stage block one step earlier, repeating the last block.
fn shift_blocks(v: &mut DVector<f64>, start: usize, block: usize, count: usize) {
    if count < 2 {
        return;
    }
    for k in 0..count - 1 {
        for j in 0..block {
            v[start + k * block + j] = v[start + (k + 1) * block + j];
        }
    }
}

fn shifted_warm_start(prev: &QpSolution, layout: &HorizonLayout) -> WarmStart {
    let n = layout.horizon;
    let mut x = prev.x.clone();
    shift_blocks(&mut x, 0, STATE_DIM, n + 1);
    shift_blocks(&mut x, layout.input_index(0), INPUT_DIM, n);
    let mut y = prev.y.clone();
    shift_blocks(&mut y, layout.dynamics_row(), STATE_DIM, n);
    shift_blocks(&mut y, layout.box_row(), STATE_DIM, n);
    shift_blocks(&mut y, layout.box_row() + STATE_DIM * n, INPUT_DIM, n);
    WarmStart { x, y }
}

/// One control tick: lookup, error, linearize, build, solve.
pub fn mpc_step(
    q: &VehicleState,
    trajectory: &Trajectory,
    cursor: usize,
    memory: &MpcMemory,
    config: &MpcConfig,
    params: &VehicleParams,
) -> Result<MpcOutput, ControlError> {
    let (reference, new_cursor) = reference_lookup(
        q,
        trajectory,
        cursor,
        config.lookahead,
        config.search_window,
    )?;
    let e0 = error_state(q, &reference);
    let start = (new_cursor + config.lookahead).min(trajectory.last_index());
    let refs = horizon_references(trajectory, start, config.horizon, config.dt);

    let layout = HorizonLayout {
        horizon: config.horizon,
        state_dim: STATE_DIM,
        input_dim: INPUT_DIM,
    };
    let compatible = memory
        .last_solution
        .as_ref()
        .filter(|s| s.x.len() == layout.n_vars() && s.status == QpStatus::Solved);
    let warm = compatible.map(|s| shifted_warm_start(s, &layout));
    let steering: Vec<f64> = match &warm {
        Some(w) => (0..config.horizon)
            .map(|k| w.x[layout.input_index(k) + 1])
            .collect(),
        None => refs
            .iter()
            .take(config.horizon)
            .map(|r| r.u_r.delta)
            .collect(),
    };

    let fallback = memory.last_input.unwrap_or(reference.u_r);
    let held = |status, iterations, objective| MpcDiagnostics {
        reference,
        error: e0,
        status,
        iterations,
        objective,
        held: true,
    };

    let (a_seq, b_seq) = linearize_horizon(&e0, &refs, &steering, config, params)?;
    let problem = build_qp(&e0, &a_seq, &b_seq, &refs, config)?;
    let solution = match solve_qp(&problem, warm.as_ref(), &config.solver) {
        Ok(s) => s,
        Err(_) => {
            return Ok(MpcOutput {
                input: config.clamp_input(&fallback),
                cursor: new_cursor,
                diagnostics: held(QpStatus::MaxIterations, 0, f64::NAN),
                memory: MpcMemory {
                    last_input: Some(fallback),
                    last_solution: None,
                },
            })
        }
    };

    if solution.status != QpStatus::Solved {
        let input = config.clamp_input(&fallback);
        return Ok(MpcOutput {
            input,
            cursor: new_cursor,
            diagnostics: held(solution.status, solution.iterations, solution.objective),
            memory: MpcMemory {
                last_input: Some(input),
                last_solution: None,
            },
        });
    }

    let u0 = solution_inputs(&solution, &layout)[0];
    let input = config.clamp_input(&u0);
    Ok(MpcOutput {
        input,
        cursor: new_cursor,
        diagnostics: MpcDiagnostics {
            reference,
            error: e0,
            status: solution.status,
            iterations: solution.iterations,
            objective: solution.objective,
            held: false,
        },
        memory: MpcMemory {
            last_input: Some(input),
            last_solution: Some(solution),
        },
    })
}
