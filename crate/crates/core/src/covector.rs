//! Costates from NLP multipliers, and the necessary conditions as residuals.
//!
//! With the Lagrangian `f + l^T c` and defects `D X - (T/2) F`, stationarity
//! of the transcribed program in `u_j` reads `(T/2) w_j (dl/du - nu_j . df/du)`,
//! so the costate estimate is `lambda_j = -nu_j / w_j`. The sign is pinned by
//! the LQ problem `min int u^2, x' = u, x(0) = 0, x(T) = b`, whose costate is
//! `-2b/T`. Path multipliers carry no `T/2`, so `mu_j = (2/T) eta_j / w_j`.
//!
//! At interior nodes the summation-by-parts identity of the LGL
//! differentiation matrix turns the state stationarity into the collocated
//! adjoint equation. At the last node it leaves `(T/2) w_N r_N = lambda_N -
//! beta_N`, where `beta_N` are the terminal-condition multipliers, which is
//! the discrete transversality condition. At node 0 the initial-condition
//! multipliers absorb the residual, so nothing is checked there.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::basis::Grid;
use crate::ocp::{OcpProblem, PendulumParams};
use crate::sqp::NlpSolution;
use crate::transcribe::{node_derivatives, NlpProblem, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovectorError {
    #[error("multiplier vector has {got} entries, layout expects {expected}")]
    Layout { expected: usize, got: usize },
}

/// Costate and path-covector estimates at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrajectory {
    /// Rows are nodes, columns states.
    pub costates: DMatrix<f64>,
    /// Rows are nodes, columns path constraints.
    pub path_covectors: DMatrix<f64>,
    /// Initial-condition multipliers (one per state), then terminal ones.
    pub boundary: Vec<f64>,
    /// State index of each terminal multiplier.
    pub terminal_states: Vec<usize>,
}

impl DualTrajectory {
    pub fn nodes(&self) -> usize {
        self.costates.nrows()
    }

    pub fn costate(&self, node: usize) -> Vec<f64> {
        self.costates.row(node).iter().copied().collect()
    }

    pub fn costate_channel(&self, i: usize) -> Vec<f64> {
        self.costates.column(i).iter().copied().collect()
    }

    pub fn path_covector_channel(&self, k: usize) -> Vec<f64> {
        self.path_covectors.column(k).iter().copied().collect()
    }

    /// `max_t |lambda|_inf`.
    pub fn costate_scale(&self) -> f64 {
        self.costates.amax()
    }

    /// Final costate with the terminal-condition multipliers folded in; this
    /// is what transversality requires to vanish.
    pub fn terminal_costate(&self) -> Vec<f64> {
        let mut lam = self.costate(self.nodes() - 1);
        let nx = lam.len();
        for (b, &i) in self.terminal_states.iter().enumerate() {
            lam[i] -= self.boundary[nx + b];
        }
        lam
    }
}

pub fn extract_duals(sol: &NlpSolution, nlp: &NlpProblem) -> Result<DualTrajectory, CovectorError> {
    let layout = nlp.constraint_layout();
    let expected = layout.len();
    if sol.multipliers.len() != expected {
        return Err(CovectorError::Layout { expected, got: sol.multipliers.len() });
    }
    let dims = nlp.problem().dims();
    let w = nlp.grid().weights();
    let nodes = w.len();
    let half = 0.5 * nlp.problem().horizon();
    let nu = &sol.multipliers;
    let costates = DMatrix::from_fn(nodes, dims.nx, |j, i| -nu[layout.defect_row(j, i)] / w[j]);
    let path_covectors = DMatrix::from_fn(nodes, dims.nh, |j, k| nu[layout.path_row(j, k)] / (half * w[j]));
    let boundary = (0..dims.nx + nlp.terminal_conditions().len()).map(|b| nu[layout.boundary_row(b)]).collect();
    let terminal_states = nlp.terminal_conditions().iter().map(|&(i, _)| i).collect();
    Ok(DualTrajectory { costates, path_covectors, boundary, terminal_states })
}

fn state4(traj: &Trajectory, j: usize) -> [f64; 4] {
    let r = traj.states.row(j);
    [r[0], r[1], r[2], r[3]]
}

fn costate4(duals: &DualTrajectory, j: usize) -> [f64; 4] {
    let r = duals.costates.row(j);
    [r[0], r[1], r[2], r[3]]
}

/// Lagrangian of the pendulum control Hamiltonian.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(x: &[f64; 4], x5: f64, u: f64, lam: &[f64; 4], mu: f64, t: f64, p: &PendulumParams) -> f64 {
    let (s, c) = p.target(t);
    p.c * u * u
        + p.d * (x[0] - s).powi(2)
        + p.d * (x[2] - c).powi(2)
        + lam[0] * x[1]
        + lam[1] * (-x5 * x[0] - p.a * x[1] + u * x[2])
        + lam[2] * x[3]
        + lam[3] * (-x5 * x[2] - p.a * x[3] - p.g - u * x[0])
        + mu * (x[0] * x[0] + x[2] * x[2] - p.length * p.length)
}

/// `u - (lambda4 x1 - lambda2 x3) / 2c` at each node.
pub fn residual_stationarity_u(traj: &Trajectory, duals: &DualTrajectory, p: &PendulumParams) -> Vec<f64> {
    (0..traj.times.len())
        .map(|j| {
            let x = state4(traj, j);
            let l = costate4(duals, j);
            traj.controls[(j, 0)] - (l[3] * x[0] - l[1] * x[2]) / (2.0 * p.c)
        })
        .collect()
}

/// `lambda2 x1 + lambda4 x3` at each node; `x5` enters the Hamiltonian
/// linearly, so this switching function must vanish.
pub fn residual_stationarity_x5(traj: &Trajectory, duals: &DualTrajectory) -> Vec<f64> {
    (0..traj.times.len())
        .map(|j| {
            let x = state4(traj, j);
            let l = costate4(duals, j);
            l[1] * x[0] + l[3] * x[2]
        })
        .collect()
}

/// `lambda' + dH/dx` at each node with `lambda'` from the differentiation
/// matrix. Rows are nodes, columns states.
pub fn residual_adjoint(traj: &Trajectory, duals: &DualTrajectory, grid: &Grid, p: &PendulumParams) -> DMatrix<f64> {
    let mut r = costate_derivative(duals, grid, p.horizon);
    for j in 0..grid.len() {
        let x = state4(traj, j);
        let l = costate4(duals, j);
        let x5 = traj.algebraic[(j, 0)];
        let u = traj.controls[(j, 0)];
        let mu = duals.path_covectors[(j, 0)];
        let (s, c) = p.target(traj.times[j]);
        r[(j, 0)] += 2.0 * p.d * (x[0] - s) - l[1] * x5 - l[3] * u + 2.0 * mu * x[0];
        r[(j, 1)] += l[0] - p.a * l[1];
        r[(j, 2)] += 2.0 * p.d * (x[2] - c) + l[1] * u - l[3] * x5 + 2.0 * mu * x[2];
        r[(j, 3)] += l[2] - p.a * l[3];
    }
    r
}

fn costate_derivative(duals: &DualTrajectory, grid: &Grid, horizon: f64) -> DMatrix<f64> {
    grid.diff_matrix() * &duals.costates * (2.0 / horizon)
}

/// Gradient of `l + lambda^T f + mu^T h` with respect to `(x, z, u)` at a
/// node.
fn hamiltonian_gradient(problem: &dyn OcpProblem, traj: &Trajectory, duals: &DualTrajectory, j: usize) -> DVector<f64> {
    let (x, z, u) = (traj.state(j), traj.algebraic_at(j), traj.control(j));
    let nd = node_derivatives(problem, &x, &z, &u, traj.times[j]);
    let lam = duals.costates.row(j).transpose();
    let mu = duals.path_covectors.row(j).transpose();
    nd.cost + nd.dynamics.tr_mul(&lam) + nd.path.tr_mul(&mu)
}

/// Adjoint residual for any problem, using its (possibly differenced)
/// derivatives. Agrees with [`residual_adjoint`] on the pendulum.
pub fn residual_adjoint_generic(
    traj: &Trajectory,
    duals: &DualTrajectory,
    grid: &Grid,
    problem: &dyn OcpProblem,
) -> DMatrix<f64> {
    let nx = problem.dims().nx;
    let mut r = costate_derivative(duals, grid, problem.horizon());
    for j in 0..grid.len() {
        let g = hamiltonian_gradient(problem, traj, duals, j);
        for i in 0..nx {
            r[(j, i)] += g[i];
        }
    }
    r
}

/// `dH/d(z, u)` at each node. Rows are nodes, columns the algebraic then
/// control channels.
pub fn residual_stationarity_generic(traj: &Trajectory, duals: &DualTrajectory, problem: &dyn OcpProblem) -> DMatrix<f64> {
    let d = problem.dims();
    let mut r = DMatrix::zeros(traj.times.len(), d.na + d.nu);
    for j in 0..traj.times.len() {
        let g = hamiltonian_gradient(problem, traj, duals, j);
        for c in 0..d.na + d.nu {
            r[(j, c)] = g[d.nx + c];
        }
    }
    r
}

/// `l + lambda^T f + mu^T h` along the trajectory.
pub fn hamiltonian_trace(traj: &Trajectory, duals: &DualTrajectory, problem: &dyn OcpProblem) -> Vec<f64> {
    (0..traj.times.len())
        .map(|j| {
            let (x, z, u, t) = (traj.state(j), traj.algebraic_at(j), traj.control(j), traj.times[j]);
            let f = problem.dynamics(&x, &z, &u, t);
            let h = problem.path(&x, &z, &u, t);
            let lam = duals.costates.row(j);
            let mu = duals.path_covectors.row(j);
            problem.running_cost(&x, &z, &u, t)
                + f.iter().zip(lam.iter()).map(|(a, b)| a * b).sum::<f64>()
                + h.iter().zip(mu.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transversality {
    /// `|lambda_i(T)|` after folding in terminal-condition multipliers.
    pub norms: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn check_transversality(duals: &DualTrajectory, tol: f64) -> Transversality {
    let norms: Vec<f64> = duals.terminal_costate().iter().map(|v| v.abs()).collect();
    let pass = norms.iter().all(|&v| v <= tol);
    Transversality { norms, tolerance: tol, pass }
}

/// Sign conditions on the path covector at each node. Coincident bounds
/// impose no sign.
pub fn check_complementarity(h: &[f64], mu: &[f64], lower: f64, upper: f64, tol: f64) -> Vec<bool> {
    h.iter()
        .zip(mu)
        .map(|(&h, &mu)| {
            if lower == upper {
                true
            } else if (h - upper).abs() <= tol {
                mu >= -tol
            } else if (h - lower).abs() <= tol {
                mu <= tol
            } else {
                mu.abs() <= tol
            }
        })
        .collect()
}

/// Every necessary-condition residual, reduced to maxima, with the scales the
/// verification thresholds are relative to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcReport {
    /// Max control stationarity residual.
    pub control_stationarity: f64,
    /// `max |u|` for the pendulum; `max |dl/du|` otherwise.
    pub control_scale: f64,
    /// Max switching-function residual, if the problem has an algebraic
    /// channel.
    pub algebraic_stationarity: Option<f64>,
    /// `max |lambda2 x1|` for the pendulum.
    pub algebraic_scale: f64,
    /// Per-state max adjoint residual over the interior nodes.
    pub adjoint: Vec<f64>,
    pub terminal_costates: Vec<f64>,
    /// `max_t |lambda|_inf`.
    pub costate_scale: f64,
    pub complementarity: bool,
    pub hamiltonian: Vec<f64>,
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn interior_max(r: &DMatrix<f64>) -> Vec<f64> {
    let n = r.nrows();
    (0..r.ncols())
        .map(|i| (1..n.saturating_sub(1)).fold(0.0, |m: f64, j| m.max(r[(j, i)].abs())))
        .collect()
}

fn complementarity_all(traj: &Trajectory, duals: &DualTrajectory, problem: &dyn OcpProblem) -> bool {
    let (lo, hi) = problem.path_bounds();
    (0..problem.dims().nh).all(|k| {
        let h: Vec<f64> = (0..traj.times.len())
            .map(|j| problem.path(&traj.state(j), &traj.algebraic_at(j), &traj.control(j), traj.times[j])[k])
            .collect();
        check_complementarity(&h, &duals.path_covector_channel(k), lo[k], hi[k], 1e-8)
            .into_iter()
            .all(|b| b)
    })
}

pub fn pendulum_nc_report(
    traj: &Trajectory,
    duals: &DualTrajectory,
    grid: &Grid,
    problem: &dyn OcpProblem,
    p: &PendulumParams,
) -> NcReport {
    let su = residual_stationarity_u(traj, duals, p);
    let sz = residual_stationarity_x5(traj, duals);
    let l2x1: Vec<f64> = (0..traj.times.len()).map(|j| duals.costates[(j, 1)] * traj.states[(j, 0)]).collect();
    NcReport {
        control_stationarity: amax(&su),
        control_scale: amax(&traj.control_channel(0)),
        algebraic_stationarity: Some(amax(&sz)),
        algebraic_scale: amax(&l2x1),
        adjoint: interior_max(&residual_adjoint(traj, duals, grid, p)),
        terminal_costates: duals.terminal_costate().iter().map(|v| v.abs()).collect(),
        costate_scale: duals.costate_scale(),
        complementarity: complementarity_all(traj, duals, problem),
        hamiltonian: hamiltonian_trace(traj, duals, problem),
    }
}

pub fn nc_report(traj: &Trajectory, duals: &DualTrajectory, grid: &Grid, problem: &dyn OcpProblem) -> NcReport {
    let d = problem.dims();
    let st = residual_stationarity_generic(traj, duals, problem);
    let column_max = |c: usize| st.column(c).amax();
    let control_scale = (0..traj.times.len())
        .map(|j| {
            let nd = node_derivatives(problem, &traj.state(j), &traj.algebraic_at(j), &traj.control(j), traj.times[j]);
            nd.cost.rows(d.nx + d.na, d.nu).amax()
        })
        .fold(0.0, f64::max);
    NcReport {
        control_stationarity: (d.na..d.na + d.nu).map(column_max).fold(0.0, f64::max),
        control_scale,
        algebraic_stationarity: (d.na > 0).then(|| (0..d.na).map(column_max).fold(0.0, f64::max)),
        algebraic_scale: 0.0,
        adjoint: interior_max(&residual_adjoint_generic(traj, duals, grid, problem)),
        terminal_costates: duals.terminal_costate().iter().map(|v| v.abs()).collect(),
        costate_scale: duals.costate_scale(),
        complementarity: complementarity_all(traj, duals, problem),
        hamiltonian: hamiltonian_trace(traj, duals, problem),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Grid;
    use crate::ocp::{Pendulum, PendulumParams};
    use approx::assert_abs_diff_eq;

    fn duals(costates: DMatrix<f64>, mu: DMatrix<f64>) -> DualTrajectory {
        DualTrajectory { costates, path_covectors: mu, boundary: vec![0.0; 4], terminal_states: vec![] }
    }

    fn traj(states: DMatrix<f64>, x5: f64, u: f64) -> Trajectory {
        let n = states.nrows();
        Trajectory {
            times: (0..n).map(|j| j as f64 * 0.1).collect(),
            states,
            algebraic: DMatrix::from_element(n, 1, x5),
            controls: DMatrix::from_element(n, 1, u),
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let p = PendulumParams::default();
        let x = [0.3, -0.2, 1.1, 0.4];
        let zero = [0.0; 4];
        assert_eq!(hamiltonian(&x, 0.7, 0.9, &zero, 0.0, 0.4, &p), crate::ocp::pendulum_cost(&x, 0.9, 0.4, &p));
        let on = [2.0 * 0.6f64.sin(), 0.1, 2.0 * 0.6f64.cos(), -0.3];
        let base = hamiltonian(&on, 0.2, 0.1, &[1.0, 2.0, 3.0, 4.0], 0.0, 0.2, &p);
        let with_mu = hamiltonian(&on, 0.2, 0.1, &[1.0, 2.0, 3.0, 4.0], 17.0, 0.2, &p);
        assert_abs_diff_eq!(base, with_mu, epsilon = 1e-12);
        let d0 = PendulumParams { d: 0.0, ..p };
        assert_eq!(hamiltonian(&[0.0, 0.0, 2.0, 0.0], -2.0, 0.0, &[0.0, 0.0, 0.0, 1.0], 0.0, 0.0, &d0), 0.0);
    }

    #[test]
    fn stationarity_examples() {
        let p = PendulumParams::default();
        let states = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.5, 0.0, -0.5, 0.0]);
        let lam = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.3, 0.0, 0.3]);
        let mu = DMatrix::zeros(2, 1);
        let d = duals(lam.clone(), mu.clone());
        let x5 = residual_stationarity_x5(&traj(states.clone(), 0.0, 0.0), &d);
        assert_eq!(x5, vec![0.0, 0.0]);

        let u0 = (lam[(0, 3)] * states[(0, 0)] - lam[(0, 1)] * states[(0, 2)]) / (2.0 * p.c);
        let r = residual_stationarity_u(&traj(states.rows(0, 1).into_owned(), 0.0, u0), &duals(lam.rows(0, 1).into_owned(), mu.rows(0, 1).into_owned()), &p);
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-15);

        let zero = duals(DMatrix::zeros(2, 4), mu);
        assert_eq!(residual_stationarity_u(&traj(states, 0.0, 1.0), &zero, &p), vec![1.0, 1.0]);
    }

    #[test]
    fn adjoint_vanishes_on_zero_data() {
        let p = PendulumParams { d: 0.0, ..Default::default() };
        let grid = Grid::new(6).unwrap();
        let t = Trajectory {
            times: grid.times(p.horizon),
            states: DMatrix::zeros(7, 4),
            algebraic: DMatrix::zeros(7, 1),
            controls: DMatrix::zeros(7, 1),
        };
        let r = residual_adjoint(&t, &duals(DMatrix::zeros(7, 4), DMatrix::zeros(7, 1)), &grid, &p);
        assert_eq!(r.amax(), 0.0);
    }

    #[test]
    fn pendulum_adjoint_forms_agree() {
        let p = PendulumParams::default();
        let prob = Pendulum::new(p).unwrap();
        let grid = Grid::new(5).unwrap();
        let n = grid.len();
        let times = grid.times(p.horizon);
        let t = Trajectory {
            states: DMatrix::from_fn(n, 4, |j, i| (times[j] + i as f64).sin()),
            algebraic: DMatrix::from_fn(n, 1, |j, _| times[j].cos()),
            controls: DMatrix::from_fn(n, 1, |j, _| 0.3 * times[j]),
            times,
        };
        let d = duals(DMatrix::from_fn(n, 4, |j, i| (j * 3 + i) as f64 * 0.1), DMatrix::from_fn(n, 1, |j, _| j as f64));
        let a = residual_adjoint(&t, &d, &grid, &p);
        let b = residual_adjoint_generic(&t, &d, &grid, &prob);
        assert!((a - b).amax() < 1e-9);
        let h = hamiltonian_trace(&t, &d, &prob);
        for (j, hj) in h.iter().enumerate() {
            let x = state4(&t, j);
            let expect = hamiltonian(&x, t.algebraic[(j, 0)], t.controls[(j, 0)], &costate4(&d, j), d.path_covectors[(j, 0)], t.times[j], &p);
            assert_abs_diff_eq!(*hj, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn transversality_examples() {
        let zero = duals(DMatrix::zeros(3, 4), DMatrix::zeros(3, 1));
        let v = check_transversality(&zero, 1e-2);
        assert!(v.pass);
        assert_eq!(v.norms, vec![0.0; 4]);
        let mut lam = DMatrix::zeros(3, 4);
        lam[(2, 0)] = 0.5;
        assert!(!check_transversality(&duals(lam, DMatrix::zeros(3, 1)), 1e-2).pass);
    }

    #[test]
    fn terminal_multipliers_fold_in() {
        let d = DualTrajectory {
            costates: DMatrix::from_element(3, 1, -2.0),
            path_covectors: DMatrix::zeros(3, 0),
            boundary: vec![2.0, -2.0],
            terminal_states: vec![0],
        };
        assert_eq!(d.terminal_costate(), vec![0.0]);
        assert!(check_transversality(&d, 1e-12).pass);
    }

    #[test]
    fn complementarity_examples() {
        assert!(check_complementarity(&[0.0, 0.3], &[4.0, -9.0], 0.0, 0.0, 1e-6).iter().all(|b| *b));
        assert_eq!(check_complementarity(&[0.5], &[0.3], 0.0, 1.0, 1e-6), vec![false]);
        assert_eq!(check_complementarity(&[1.0], &[5.0], 0.0, 1.0, 1e-6), vec![true]);
        assert_eq!(check_complementarity(&[0.0], &[5.0], 0.0, 1.0, 1e-6), vec![false]);
        assert_eq!(check_complementarity(&[0.0], &[-5.0], 0.0, 1.0, 1e-6), vec![true]);
    }

    #[test]
    fn residuals_are_pure() {
        let p = PendulumParams::default();
        let grid = Grid::new(4).unwrap();
        let times = grid.times(p.horizon);
        let t = Trajectory {
            states: DMatrix::from_fn(5, 4, |j, i| (j + i) as f64),
            algebraic: DMatrix::from_element(5, 1, 0.2),
            controls: DMatrix::from_element(5, 1, -0.4),
            times,
        };
        let d = duals(DMatrix::from_fn(5, 4, |j, i| (j as f64) - (i as f64)), DMatrix::from_element(5, 1, 0.1));
        assert_eq!(residual_adjoint(&t, &d, &grid, &p), residual_adjoint(&t, &d, &grid, &p));
        assert_eq!(residual_stationarity_u(&t, &d, &p), residual_stationarity_u(&t, &d, &p));
    }
}
