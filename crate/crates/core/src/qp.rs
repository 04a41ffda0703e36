//! Dense ADMM solver for convex quadratic programs.
//!
//! Problems take the form
//!
//! ```text
//! minimize    xᵀ H x + cᵀ x + k
//! subject to  l ≤ A x ≤ u
//! ```
//!
//! and are solved with the operator-splitting iteration used by OSQP: a
//! linear solve against the fixed matrix `2H + σI + Aᵀ diag(ρ) A`, a
//! projection onto the box `[l, u]`, and a dual ascent step, with
//! over-relaxation. Rows with `l = u` get a stiffer penalty. When the
//! iteration stops, a polishing pass guesses the active set from the duals
//! and solves the resulting equality-constrained KKT system directly; the
//! polished point is kept only if it certifies optimality.
//!
//! Problems here have at most a few hundred variables, so all linear
//! algebra is dense.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains NaN")]
    NonFinite,
    #[error("lower bound exceeds upper bound on row {0}")]
    InvertedBounds(usize),
    #[error("KKT matrix factorization failed; hessian is not positive semi-definite")]
    Factorization,
}

/// Index bookkeeping for horizon-stacked problems: errors `e_0..e_N` come
/// first, then inputs `u_0..u_{N-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HorizonLayout {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
}

impl HorizonLayout {
    pub fn n_vars(&self) -> usize {
        self.state_dim * (self.horizon + 1) + self.input_dim * self.horizon
    }

    pub fn state_index(&self, k: usize) -> usize {
        self.state_dim * k
    }

    pub fn input_index(&self, k: usize) -> usize {
        self.state_dim * (self.horizon + 1) + self.input_dim * k
    }

    /// First row of the dynamics equalities; rows before it pin `e_0`.
    pub fn dynamics_row(&self) -> usize {
        self.state_dim
    }

    /// First row of the variable boxes.
    pub fn box_row(&self) -> usize {
        self.state_dim * (self.horizon + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub constraints: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub layout: Option<HorizonLayout>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.hessian * x)[(0, 0)] + self.linear.dot(x) + self.constant
    }

    /// Largest violation of `l ≤ A x ≤ u`.
    pub fn constraint_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.constraints * x;
        ax.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        let m = self.n_constraints();
        if self.hessian.ncols() != n {
            return Err(QpError::Dimension(format!(
                "hessian is {}x{}",
                self.hessian.nrows(),
                self.hessian.ncols()
            )));
        }
        if self.linear.len() != n {
            return Err(QpError::Dimension(format!(
                "linear term has {} entries for {n} variables",
                self.linear.len()
            )));
        }
        if self.constraints.ncols() != n && m > 0 {
            return Err(QpError::Dimension(format!(
                "constraint matrix has {} columns for {n} variables",
                self.constraints.ncols()
            )));
        }
        if self.lower.len() != m || self.upper.len() != m {
            return Err(QpError::Dimension(format!(
                "bounds have {}/{} entries for {m} rows",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some(layout) = self.layout {
            if layout.n_vars() != n {
                return Err(QpError::Dimension(format!(
                    "layout describes {} variables, problem has {n}",
                    layout.n_vars()
                )));
            }
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        if !finite(&self.hessian)
            || !self.linear.iter().all(|x| x.is_finite())
            || !finite(&self.constraints)
            || !self.constant.is_finite()
        {
            return Err(QpError::NonFinite);
        }
        for i in 0..m {
            if self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(QpError::NonFinite);
            }
            if self.lower[i] > self.upper[i] {
                return Err(QpError::InvertedBounds(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSettings {
    /// ADMM step parameter.
    pub rho: f64,
    /// Proximal regularization on the primal variable.
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    /// Absolute tolerance on primal and dual residuals (∞-norm).
    pub tolerance: f64,
    /// Tolerance of the primal infeasibility certificate.
    pub infeasibility_tolerance: f64,
    pub max_iterations: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            tolerance: 1e-6,
            infeasibility_tolerance: 1e-5,
            max_iterations: 4000,
            polish: true,
        }
    }
}

const EQUALITY_RHO_SCALE: f64 = 1e3;
const FREE_ROW_RHO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIterations => "max-iterations",
            QpStatus::PrimalInfeasible => "primal-infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Constraint values `A x`, projected onto the bounds.
    pub z: DVector<f64>,
    /// Dual variables; positive on active upper bounds, negative on lower.
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

/// Starting point for the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl From<&QpSolution> for WarmStart {
    fn from(s: &QpSolution) -> Self {
        Self {
            x: s.x.clone(),
            y: s.y.clone(),
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn project(v: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(&x, (&l, &u))| x.max(l).min(u)),
    )
}

fn is_equality(l: f64, u: f64) -> bool {
    (u - l).abs() <= 1e-12
}

pub fn solve_qp(
    problem: &QpProblem,
    warm: Option<&WarmStart>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.n_vars();
    let m = problem.n_constraints();
    let a = &problem.constraints;
    let (l, u) = (&problem.lower, &problem.upper);
    let p = &problem.hessian * 2.0;
    let q = &problem.linear;

    let rho = DVector::from_iterator(
        m,
        (0..m).map(|i| {
            if l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY {
                FREE_ROW_RHO
            } else if is_equality(l[i], u[i]) {
                settings.rho * EQUALITY_RHO_SCALE
            } else {
                settings.rho
            }
        }),
    );

    let mut kkt = &p + DMatrix::identity(n, n) * settings.sigma;
    if m > 0 {
        kkt += a.transpose() * DMatrix::from_diagonal(&rho) * a;
    }
    let chol = kkt.cholesky().ok_or(QpError::Factorization)?;

    let (mut x, mut y) = match warm {
        Some(w) if w.x.len() == n && w.y.len() == m => (w.x.clone(), w.y.clone()),
        Some(_) => {
            return Err(QpError::Dimension(
                "warm start does not match the problem".into(),
            ));
        }
        None => (DVector::zeros(n), DVector::zeros(m)),
    };
    let mut z = project(&(a * &x), l, u);

    let alpha = settings.alpha;
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let mut r_prim = f64::INFINITY;
    let mut r_dual = f64::INFINITY;

    for iter in 1..=settings.max_iterations {
        iterations = iter;
        let rhs = &x * settings.sigma - q + a.tr_mul(&(rho.component_mul(&z) - &y));
        let x_tilde = chol.solve(&rhs);
        let z_tilde = a * &x_tilde;

        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_next = project(&(&z_relaxed + y.component_div(&rho)), l, u);
        let delta_y = rho.component_mul(&(&z_relaxed - &z_next));
        y += &delta_y;
        z = z_next;

        r_prim = inf_norm(&(a * &x - &z));
        r_dual = inf_norm(&(&p * &x + q + a.tr_mul(&y)));
        if r_prim <= settings.tolerance && r_dual <= settings.tolerance {
            status = QpStatus::Solved;
            break;
        }
        if primal_infeasible(a, l, u, &delta_y, settings.infeasibility_tolerance) {
            status = QpStatus::PrimalInfeasible;
            break;
        }
    }

    let mut solution = QpSolution {
        objective: problem.objective(&x),
        x,
        z,
        y,
        iterations,
        status,
        primal_residual: r_prim,
        dual_residual: r_dual,
        polished: false,
    };
    if settings.polish && status != QpStatus::PrimalInfeasible {
        if let Some(polished) = polish(problem, &p, &solution, settings.tolerance) {
            solution = polished;
        }
    }
    Ok(solution)
}

/// OSQP-style certificate: a dual direction `δy` with `Aᵀδy ≈ 0` and
/// `uᵀδy⁺ + lᵀδy⁻ < 0` proves the constraints cannot all hold.
fn primal_infeasible(
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    delta_y: &DVector<f64>,
    eps: f64,
) -> bool {
    let norm = inf_norm(delta_y);
    if norm < 1e-10 {
        return false;
    }
    if inf_norm(&a.tr_mul(delta_y)) > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..delta_y.len() {
        let dy = delta_y[i];
        if dy > eps * norm {
            if u[i] == f64::INFINITY {
                return false;
            }
            support += u[i] * dy;
        } else if dy < -eps * norm {
            if l[i] == f64::NEG_INFINITY {
                return false;
            }
            support += l[i] * dy;
        }
    }
    support < -eps * norm
}

#[derive(Clone, Copy)]
enum Active {
    Lower,
    Upper,
    Equality,
}

/// Solves the KKT system of the active set suggested by the ADMM iterate.
fn polish(
    problem: &QpProblem,
    p: &DMatrix<f64>,
    sol: &QpSolution,
    tolerance: f64,
) -> Option<QpSolution> {
    let n = problem.n_vars();
    let a = &problem.constraints;
    let (l, u) = (&problem.lower, &problem.upper);

    let mut active: Vec<(usize, Active)> = Vec::new();
    for i in 0..problem.n_constraints() {
        if is_equality(l[i], u[i]) {
            active.push((i, Active::Equality));
        } else if l[i].is_finite() && sol.z[i] - l[i] < -sol.y[i] {
            active.push((i, Active::Lower));
        } else if u[i].is_finite() && u[i] - sol.z[i] < sol.y[i] {
            active.push((i, Active::Upper));
        }
    }

    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    for (j, &(row, side)) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = a[(row, c)];
            kkt[(c, n + j)] = a[(row, c)];
        }
        rhs[n + j] = match side {
            Active::Upper => u[row],
            _ => l[row],
        };
    }
    rhs.rows_mut(0, n).copy_from(&(-&problem.linear));

    let solved = solve_kkt(&kkt, &rhs, n)?;
    let x = solved.rows(0, n).into_owned();
    let mut y = DVector::zeros(problem.n_constraints());
    for (j, &(row, side)) in active.iter().enumerate() {
        let dual = solved[n + j];
        let wrong_sign = match side {
            Active::Lower => dual > tolerance,
            Active::Upper => dual < -tolerance,
            Active::Equality => false,
        };
        if wrong_sign {
            return None;
        }
        y[row] = dual;
    }

    let ax = a * &x;
    let z = project(&ax, l, u);
    let r_prim = inf_norm(&(&ax - &z));
    let r_dual = inf_norm(&(p * &x + &problem.linear + a.transpose() * &y));
    if !(r_prim <= tolerance && r_dual <= tolerance) {
        return None;
    }
    Some(QpSolution {
        objective: problem.objective(&x),
        x,
        z,
        y,
        iterations: sol.iterations,
        status: QpStatus::Solved,
        primal_residual: r_prim,
        dual_residual: r_dual,
        polished: true,
    })
}

/// Direct LU solve, falling back to a regularized system with iterative
/// refinement when active rows are linearly dependent.
fn solve_kkt(kkt: &DMatrix<f64>, rhs: &DVector<f64>, n: usize) -> Option<DVector<f64>> {
    if let Some(sol) = kkt.clone().lu().solve(rhs) {
        if sol.iter().all(|v| v.is_finite()) && inf_norm(&(kkt * &sol - rhs)) < 1e-9 {
            return Some(sol);
        }
    }
    let delta = 1e-9;
    let mut reg = kkt.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += if i < n { delta } else { -delta };
    }
    let lu = reg.lu();
    let mut sol = lu.solve(rhs)?;
    for _ in 0..5 {
        let residual = rhs - kkt * &sol;
        sol += lu.solve(&residual)?;
    }
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unconstrained(h: DMatrix<f64>, c: DVector<f64>) -> QpProblem {
        let n = h.nrows();
        QpProblem {
            hessian: h,
            linear: c,
            constant: 0.0,
            constraints: DMatrix::zeros(0, n),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
            layout: None,
        }
    }

    #[test]
    fn identity_quadratic() {
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let problem = unconstrained(DMatrix::identity(3, 3), &b * -2.0);
        let sol = solve_qp(&problem, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((&sol.x - &b).amax() < 1e-9);
    }

    #[test]
    fn active_upper_bound() {
        // (u - 3)^2 = u^2 - 6u + 9
        let problem = QpProblem {
            hessian: DMatrix::from_element(1, 1, 1.0),
            linear: DVector::from_element(1, -6.0),
            constant: 9.0,
            constraints: DMatrix::from_element(1, 1, 1.0),
            lower: DVector::from_element(1, 0.0),
            upper: DVector::from_element(1, 1.0),
            layout: None,
        };
        let sol = solve_qp(&problem, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 4.0).abs() < 1e-9);
        assert!(sol.y[0] > 0.0);
    }

    #[test]
    fn conflicting_constraints_are_infeasible() {
        // x0 + x1 = 3 with both in [0, 1]
        let mut a = DMatrix::zeros(3, 2);
        a[(0, 0)] = 1.0;
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        a[(2, 1)] = 1.0;
        let problem = QpProblem {
            hessian: DMatrix::identity(2, 2),
            linear: DVector::zeros(2),
            constant: 0.0,
            constraints: a,
            lower: DVector::from_vec(vec![3.0, 0.0, 0.0]),
            upper: DVector::from_vec(vec![3.0, 1.0, 1.0]),
            layout: None,
        };
        let sol = solve_qp(&problem, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn malformed_problems_rejected() {
        let mut problem = unconstrained(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(matches!(
            solve_qp(&problem, None, &QpSettings::default()),
            Err(QpError::Dimension(_))
        ));
        problem.linear = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert_eq!(
            solve_qp(&problem, None, &QpSettings::default()),
            Err(QpError::NonFinite)
        );
        let inverted = QpProblem {
            hessian: DMatrix::identity(1, 1),
            linear: DVector::zeros(1),
            constant: 0.0,
            constraints: DMatrix::identity(1, 1),
            lower: DVector::from_element(1, 1.0),
            upper: DVector::from_element(1, 0.0),
            layout: None,
        };
        assert_eq!(
            solve_qp(&inverted, None, &QpSettings::default()),
            Err(QpError::InvertedBounds(0))
        );
    }

    #[test]
    fn indefinite_hessian_fails_factorization() {
        let mut h = DMatrix::identity(2, 2);
        h[(1, 1)] = -5.0;
        let problem = unconstrained(h, DVector::zeros(2));
        assert_eq!(
            solve_qp(&problem, None, &QpSettings::default()),
            Err(QpError::Factorization)
        );
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let mut a = DMatrix::zeros(3, 2);
        a[(0, 0)] = 1.0;
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        a[(2, 1)] = 1.0;
        let problem = QpProblem {
            hessian: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            linear: DVector::from_vec(vec![-4.0, 1.0]),
            constant: 0.0,
            constraints: a,
            lower: DVector::from_vec(vec![1.0, -1.0, 0.2]),
            upper: DVector::from_vec(vec![1.0, 0.6, 2.0]),
            layout: None,
        };
        let settings = QpSettings::default();
        let cold = solve_qp(&problem, None, &settings).unwrap();
        assert_eq!(cold.status, QpStatus::Solved);
        let warm = solve_qp(&problem, Some(&WarmStart::from(&cold)), &settings).unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert!(warm.iterations <= 5, "{} iterations", warm.iterations);
        assert!((&warm.x - &cold.x).amax() < 1e-8);
    }

    #[test]
    fn unpolished_iteration_still_converges() {
        let problem = QpProblem {
            hessian: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]),
            linear: DVector::from_vec(vec![-3.0, -1.0]),
            constant: 0.0,
            constraints: DMatrix::identity(2, 2),
            lower: DVector::from_vec(vec![-1.0, -1.0]),
            upper: DVector::from_vec(vec![1.0, 1.0]),
            layout: None,
        };
        let settings = QpSettings {
            polish: false,
            ..QpSettings::default()
        };
        let sol = solve_qp(&problem, None, &settings).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(!sol.polished);
        assert!(sol.primal_residual <= 1e-6 && sol.dual_residual <= 1e-6);
        assert!((sol.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layout_indices() {
        let layout = HorizonLayout {
            horizon: 3,
            state_dim: 4,
            input_dim: 2,
        };
        assert_eq!(layout.n_vars(), 16 + 6);
        assert_eq!(layout.state_index(3), 12);
        assert_eq!(layout.input_index(0), 16);
        assert_eq!(layout.input_index(2), 20);
        assert_eq!(layout.box_row(), 16);
    }
}
