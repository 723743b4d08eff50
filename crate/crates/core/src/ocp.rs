//! Optimal control problem model.
//!
//! Problems are evaluated one node at a time: every function takes the
//! differential states `x`, algebraic variables `z`, controls `u` and the
//! physical time `t` at a single instant. Analytic derivatives are optional;
//! the transcription falls back to central differences when a problem does
//! not provide them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("state is not consistent with the length constraint and its derivative (residuals {position:e}, {velocity:e})")]
    InconsistentState { position: f64, velocity: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Channel counts of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    /// differential states
    pub nx: usize,
    /// algebraic variables
    pub na: usize,
    /// controls
    pub nu: usize,
    /// path constraints
    pub nh: usize,
}

impl Dims {
    /// Decision channels per node.
    pub fn per_node(&self) -> usize {
        self.nx + self.na + self.nu
    }
}

/// A fixed-horizon DAE optimal control problem on `[0, T]`.
///
/// Jacobian blocks, when provided, are taken with respect to the stacked
/// node vector `(x, z, u)` in that order.
pub trait OcpProblem: Sync {
    fn dims(&self) -> Dims;

    fn horizon(&self) -> f64;

    fn dynamics(&self, x: &[f64], z: &[f64], u: &[f64], t: f64) -> Vec<f64>;

    fn path(&self, _x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Lower and upper bounds of the path constraints.
    fn path_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nh = self.dims().nh;
        (vec![0.0; nh], vec![0.0; nh])
    }

    fn running_cost(&self, x: &[f64], z: &[f64], u: &[f64], t: f64) -> f64;

    fn initial_state(&self) -> Vec<f64>;

    /// Fixed terminal values as `(state index, value)` pairs.
    fn terminal_conditions(&self) -> Vec<(usize, f64)> {
        Vec::new()
    }

    /// `nx x (nx+na+nu)` Jacobian of the dynamics.
    fn dynamics_jacobian(&self, _x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        None
    }

    /// `nh x (nx+na+nu)` Jacobian of the path constraints.
    fn path_jacobian(&self, _x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        None
    }

    /// Gradient of the running cost, length `nx+na+nu`.
    fn cost_gradient(&self, _x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Option<DVector<f64>> {
        None
    }
}

/// Parameters of the pendulum tracking problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// damping (1/s)
    pub a: f64,
    /// control weight
    pub c: f64,
    /// tracking weight
    pub d: f64,
    /// gravity (m/s^2)
    pub g: f64,
    /// rod length (m)
    pub length: f64,
    /// phase lead of the target (rad)
    pub alpha: f64,
    /// horizon (s)
    pub horizon: f64,
}

impl Default for PendulumParams {
    /// The challenge data set. `alpha` is not part of it and defaults to 0.
    fn default() -> Self {
        Self { a: 0.5, c: 1.0, d: 100.0, g: 4.0, length: 2.0, alpha: 0.0, horizon: 2.2 }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.a, self.c, self.d, self.g, self.length, self.alpha, self.horizon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter("parameters must be finite".into()));
        }
        if self.length <= 0.0 {
            return Err(ModelError::InvalidParameter(format!("L = {} must be positive", self.length)));
        }
        if self.c <= 0.0 {
            return Err(ModelError::InvalidParameter(format!("c = {} must be positive", self.c)));
        }
        if self.d < 0.0 {
            return Err(ModelError::InvalidParameter(format!("d = {} must be non-negative", self.d)));
        }
        if self.horizon <= 0.0 {
            return Err(ModelError::InvalidParameter(format!("T = {} must be positive", self.horizon)));
        }
        Ok(())
    }

    /// Target position `(L sin(t+alpha), L cos(t+alpha))`.
    pub fn target(&self, t: f64) -> (f64, f64) {
        let (s, c) = (t + self.alpha).sin_cos();
        (self.length * s, self.length * c)
    }
}

/// Cartesian pendulum right-hand side; `x5` is the constraint force.
pub fn pendulum_dynamics(x: &[f64; 4], x5: f64, u: f64, t: f64, p: &PendulumParams) -> Result<[f64; 4], ModelError> {
    if x.iter().any(|v| !v.is_finite()) || !x5.is_finite() || !u.is_finite() || !t.is_finite() {
        return Err(ModelError::NonFinite("pendulum dynamics"));
    }
    Ok(pendulum_rhs(x, x5, u, p))
}

fn pendulum_rhs(x: &[f64; 4], x5: f64, u: f64, p: &PendulumParams) -> [f64; 4] {
    [
        x[1],
        -x5 * x[0] - p.a * x[1] + u * x[2],
        x[3],
        -x5 * x[2] - p.a * x[3] - p.g - u * x[0],
    ]
}

/// Length constraint `x1^2 + x3^2 - L^2`.
pub fn pendulum_path(x: &[f64; 4], p: &PendulumParams) -> f64 {
    x[0] * x[0] + x[2] * x[2] - p.length * p.length
}

/// Control effort plus squared distance to the moving target, weighted.
pub fn pendulum_cost(x: &[f64; 4], u: f64, t: f64, p: &PendulumParams) -> f64 {
    let (tx, ty) = p.target(t);
    p.c * u * u + p.d * (x[0] - tx).powi(2) + p.d * (x[2] - ty).powi(2)
}

/// The constraint force that makes the second derivative of the length
/// constraint vanish at a state on the circle with tangential velocity.
pub fn consistent_multiplier(x: &[f64; 4], p: &PendulumParams) -> Result<f64, ModelError> {
    let position = pendulum_path(x, p);
    let velocity = x[0] * x[1] + x[2] * x[3];
    if position.abs() > 1e-9 || velocity.abs() > 1e-9 {
        return Err(ModelError::InconsistentState { position, velocity });
    }
    let l2 = p.length * p.length;
    Ok((x[1] * x[1] + x[3] * x[3] - p.g * x[2]) / l2)
}

/// Angle-form pendulum with `x = L sin(phi)`, `y = L cos(phi)`.
/// Returns the angular acceleration and the running cost.
pub fn reduced_pendulum(phi: f64, phi_dot: f64, u: f64, t: f64, p: &PendulumParams) -> (f64, f64) {
    let accel = -p.a * phi_dot + u + p.g / p.length * phi.sin();
    let cost = p.c * u * u + 2.0 * p.d * p.length * p.length * (1.0 - (phi - t - p.alpha).cos());
    (accel, cost)
}

/// Cartesian state and constraint force of an angle-form state.
pub fn lift_angle(phi: f64, phi_dot: f64, p: &PendulumParams) -> ([f64; 4], f64) {
    let (s, c) = phi.sin_cos();
    let l = p.length;
    let x = [l * s, l * phi_dot * c, l * c, -l * phi_dot * s];
    let x5 = phi_dot * phi_dot - p.g / l * c;
    (x, x5)
}

fn arr4(x: &[f64]) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

/// The index-3 pendulum challenge in first-order form: four states, the
/// constraint force as an algebraic channel, one control and the length
/// constraint as an equality path constraint.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl OcpProblem for Pendulum {
    fn dims(&self) -> Dims {
        Dims { nx: 4, na: 1, nu: 1, nh: 1 }
    }

    fn horizon(&self) -> f64 {
        self.params.horizon
    }

    fn dynamics(&self, x: &[f64], z: &[f64], u: &[f64], _t: f64) -> Vec<f64> {
        pendulum_rhs(&arr4(x), z[0], u[0], &self.params).to_vec()
    }

    fn path(&self, x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Vec<f64> {
        vec![pendulum_path(&arr4(x), &self.params)]
    }

    fn running_cost(&self, x: &[f64], _z: &[f64], u: &[f64], t: f64) -> f64 {
        pendulum_cost(&arr4(x), u[0], t, &self.params)
    }

    /// `x(0) = 0, xdot(0) = 0, y(0) = L, ydot(0) = 0`: the bob at rest at the
    /// top of the circle.
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0, 0.0, self.params.length, 0.0]
    }

    fn dynamics_jacobian(&self, x: &[f64], z: &[f64], u: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        let a = self.params.a;
        let (x5, u) = (z[0], u[0]);
        #[rustfmt::skip]
        let jac = DMatrix::from_row_slice(4, 6, &[
            0.0,  1.0, 0.0, 0.0,  0.0,   0.0,
            -x5,  -a,  u,   0.0,  -x[0], x[2],
            0.0,  0.0, 0.0, 1.0,  0.0,   0.0,
            -u,   0.0, -x5, -a,   -x[2], -x[0],
        ]);
        Some(jac)
    }

    fn path_jacobian(&self, x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 6, &[2.0 * x[0], 0.0, 2.0 * x[2], 0.0, 0.0, 0.0]))
    }

    fn cost_gradient(&self, x: &[f64], _z: &[f64], u: &[f64], t: f64) -> Option<DVector<f64>> {
        let p = &self.params;
        let (tx, ty) = p.target(t);
        Some(DVector::from_row_slice(&[
            2.0 * p.d * (x[0] - tx),
            0.0,
            2.0 * p.d * (x[2] - ty),
            0.0,
            0.0,
            2.0 * p.c * u[0],
        ]))
    }
}

/// Minimal-coordinate form of the pendulum: states `(phi, phidot)`, one
/// control, no path constraints.
#[derive(Debug, Clone)]
pub struct ReducedPendulum {
    pub params: PendulumParams,
}

impl ReducedPendulum {
    pub fn new(params: PendulumParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl OcpProblem for ReducedPendulum {
    fn dims(&self) -> Dims {
        Dims { nx: 2, na: 0, nu: 1, nh: 0 }
    }

    fn horizon(&self) -> f64 {
        self.params.horizon
    }

    fn dynamics(&self, x: &[f64], _z: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        let (accel, _) = reduced_pendulum(x[0], x[1], u[0], t, &self.params);
        vec![x[1], accel]
    }

    fn running_cost(&self, x: &[f64], _z: &[f64], u: &[f64], t: f64) -> f64 {
        reduced_pendulum(x[0], x[1], u[0], t, &self.params).1
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn dynamics_jacobian(&self, x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        let p = &self.params;
        Some(DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, p.g / p.length * x[0].cos(), -p.a, 1.0]))
    }

    fn cost_gradient(&self, x: &[f64], _z: &[f64], u: &[f64], t: f64) -> Option<DVector<f64>> {
        let p = &self.params;
        let dphi = 2.0 * p.d * p.length * p.length * (x[0] - t - p.alpha).sin();
        Some(DVector::from_row_slice(&[dphi, 0.0, 2.0 * p.c * u[0]]))
    }
}

/// Scalar regression problem: `xdot = u`, minimize the integral of `u^2`,
/// `x(0) = 0`, `x(T) = b`. The optimum is `u = b/T` with cost `b^2/T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearQuadratic {
    pub horizon: f64,
    pub target: f64,
}

impl Default for LinearQuadratic {
    fn default() -> Self {
        Self { horizon: 1.0, target: 1.0 }
    }
}

impl OcpProblem for LinearQuadratic {
    fn dims(&self) -> Dims {
        Dims { nx: 1, na: 0, nu: 1, nh: 0 }
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn dynamics(&self, _x: &[f64], _z: &[f64], u: &[f64], _t: f64) -> Vec<f64> {
        vec![u[0]]
    }

    fn running_cost(&self, _x: &[f64], _z: &[f64], u: &[f64], _t: f64) -> f64 {
        u[0] * u[0]
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn terminal_conditions(&self) -> Vec<(usize, f64)> {
        vec![(0, self.target)]
    }
}
