//! LGL pseudospectral transcription of an [`OcpProblem`] into a dense
//! equality-constrained NLP.
//!
//! Decision vector, node-major: `[X_0, Z_0, U_0, X_1, Z_1, U_1, ...]`.
//! Constraint vector: all defect rows (node-major), then all path rows
//! (node-major), then the initial conditions, then any terminal conditions.
//!
//! Defects are collocated at every node, including node 0 where the initial
//! condition is also imposed.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::Grid;
use crate::ocp::{Dims, OcpProblem};
use crate::sqp::{EvalError, Nlp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscribeError {
    #[error("grid order {0} is too low for transcription (need at least 2)")]
    GridTooCoarse(usize),
    #[error("configuration error: {0}")]
    Config(String),
}

/// What a channel of the per-node decision block represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    State(usize),
    Algebraic(usize),
    Control(usize),
}

/// Maps `(node, channel)` to flat decision-vector indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub nodes: usize,
    pub dims: Dims,
}

impl VarLayout {
    pub fn len(&self) -> usize {
        self.nodes * self.dims.per_node()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, node: usize, channel: Channel) -> usize {
        let d = &self.dims;
        let offset = match channel {
            Channel::State(i) => i,
            Channel::Algebraic(i) => d.nx + i,
            Channel::Control(i) => d.nx + d.na + i,
        };
        node * d.per_node() + offset
    }

    pub fn locate(&self, index: usize) -> (usize, Channel) {
        let d = &self.dims;
        let node = index / d.per_node();
        let c = index % d.per_node();
        let channel = if c < d.nx {
            Channel::State(c)
        } else if c < d.nx + d.na {
            Channel::Algebraic(c - d.nx)
        } else {
            Channel::Control(c - d.nx - d.na)
        };
        (node, channel)
    }
}

/// Tag of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRow {
    Defect { node: usize, state: usize },
    Path { node: usize, index: usize },
    /// Boundary condition `b`: initial conditions first, then terminal ones.
    Boundary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLayout {
    pub nodes: usize,
    pub nx: usize,
    pub nh: usize,
    pub n_boundary: usize,
}

impl ConstraintLayout {
    pub fn len(&self) -> usize {
        self.nodes * (self.nx + self.nh) + self.n_boundary
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn defect_row(&self, node: usize, state: usize) -> usize {
        node * self.nx + state
    }

    pub fn path_row(&self, node: usize, index: usize) -> usize {
        self.nodes * self.nx + node * self.nh + index
    }

    pub fn boundary_row(&self, b: usize) -> usize {
        self.nodes * (self.nx + self.nh) + b
    }

    pub fn tag(&self, row: usize) -> ConstraintRow {
        let defects = self.nodes * self.nx;
        let paths = self.nodes * self.nh;
        if row < defects {
            ConstraintRow::Defect { node: row / self.nx, state: row % self.nx }
        } else if row < defects + paths {
            let r = row - defects;
            ConstraintRow::Path { node: r / self.nh, index: r % self.nh }
        } else {
            ConstraintRow::Boundary(row - defects - paths)
        }
    }
}

/// Per-channel affine map `physical = offset + gain * decision`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub offset: Vec<f64>,
    pub gain: Vec<f64>,
}

impl Scaling {
    pub fn identity(per_node: usize) -> Self {
        Self { offset: vec![0.0; per_node], gain: vec![1.0; per_node] }
    }
}

/// Nodal primal values in physical units. Rows are nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub algebraic: DMatrix<f64>,
    pub controls: DMatrix<f64>,
}

impl Trajectory {
    pub fn state(&self, node: usize) -> Vec<f64> {
        self.states.row(node).iter().copied().collect()
    }

    pub fn algebraic_at(&self, node: usize) -> Vec<f64> {
        self.algebraic.row(node).iter().copied().collect()
    }

    pub fn control(&self, node: usize) -> Vec<f64> {
        self.controls.row(node).iter().copied().collect()
    }

    pub fn state_channel(&self, i: usize) -> Vec<f64> {
        self.states.column(i).iter().copied().collect()
    }

    pub fn algebraic_channel(&self, i: usize) -> Vec<f64> {
        self.algebraic.column(i).iter().copied().collect()
    }

    pub fn control_channel(&self, i: usize) -> Vec<f64> {
        self.controls.column(i).iter().copied().collect()
    }
}

/// The transcribed program. Borrows the problem and grid it was built from.
pub struct NlpProblem<'a> {
    problem: &'a dyn OcpProblem,
    grid: &'a Grid,
    vars: VarLayout,
    cons: ConstraintLayout,
    scaling: Scaling,
    times: Vec<f64>,
    initial: Vec<f64>,
    terminal: Vec<(usize, f64)>,
}

pub fn transcribe<'a>(problem: &'a dyn OcpProblem, grid: &'a Grid) -> Result<NlpProblem<'a>, TranscribeError> {
    let dims = problem.dims();
    transcribe_scaled(problem, grid, Scaling::identity(dims.per_node()))
}

pub fn transcribe_scaled<'a>(
    problem: &'a dyn OcpProblem,
    grid: &'a Grid,
    scaling: Scaling,
) -> Result<NlpProblem<'a>, TranscribeError> {
    if grid.order() < 2 {
        return Err(TranscribeError::GridTooCoarse(grid.order()));
    }
    let dims = problem.dims();
    let horizon = problem.horizon();
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(TranscribeError::Config(format!("horizon {horizon} must be positive")));
    }
    let initial = problem.initial_state();
    if initial.len() != dims.nx {
        return Err(TranscribeError::Config(format!(
            "initial state has {} entries, problem has {} states",
            initial.len(),
            dims.nx
        )));
    }
    let terminal = problem.terminal_conditions();
    if let Some((i, _)) = terminal.iter().find(|(i, _)| *i >= dims.nx) {
        return Err(TranscribeError::Config(format!("terminal condition on state {i} out of range")));
    }
    let (lo, hi) = problem.path_bounds();
    if lo.len() != dims.nh || hi.len() != dims.nh {
        return Err(TranscribeError::Config("path bound length does not match nh".into()));
    }
    if lo.iter().zip(&hi).any(|(l, h)| l != h) {
        return Err(TranscribeError::Config("only equality path constraints are transcribed".into()));
    }
    if scaling.offset.len() != dims.per_node() || scaling.gain.len() != dims.per_node() {
        return Err(TranscribeError::Config("scaling length does not match channel count".into()));
    }
    if scaling.gain.iter().any(|g| *g == 0.0 || !g.is_finite()) {
        return Err(TranscribeError::Config("scaling gains must be finite and nonzero".into()));
    }
    let nodes = grid.len();
    Ok(NlpProblem {
        problem,
        grid,
        vars: VarLayout { nodes, dims },
        cons: ConstraintLayout { nodes, nx: dims.nx, nh: dims.nh, n_boundary: dims.nx + terminal.len() },
        scaling,
        times: grid.times(horizon),
        initial,
        terminal,
    })
}

impl<'a> NlpProblem<'a> {
    pub fn problem(&self) -> &'a dyn OcpProblem {
        self.problem
    }

    pub fn grid(&self) -> &'a Grid {
        self.grid
    }

    pub fn var_layout(&self) -> &VarLayout {
        &self.vars
    }

    pub fn constraint_layout(&self) -> &ConstraintLayout {
        &self.cons
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    /// Terminal conditions as `(state, value)`, in boundary-row order after
    /// the initial conditions.
    pub fn terminal_conditions(&self) -> &[(usize, f64)] {
        &self.terminal
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn half_horizon(&self) -> f64 {
        0.5 * self.problem.horizon()
    }

    /// Physical `(x, z, u)` at one node.
    fn node_values(&self, v: &[f64], node: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = &self.vars.dims;
        let base = node * d.per_node();
        let phys: Vec<f64> = (0..d.per_node())
            .map(|c| self.scaling.offset[c] + self.scaling.gain[c] * v[base + c])
            .collect();
        let x = phys[..d.nx].to_vec();
        let z = phys[d.nx..d.nx + d.na].to_vec();
        let u = phys[d.nx + d.na..].to_vec();
        (x, z, u)
    }

    fn physical_states(&self, v: &[f64]) -> DMatrix<f64> {
        let d = &self.vars.dims;
        DMatrix::from_fn(self.vars.nodes, d.nx, |j, i| {
            self.scaling.offset[i] + self.scaling.gain[i] * v[self.vars.index(j, Channel::State(i))]
        })
    }

    /// Split a decision vector into a physical trajectory.
    pub fn unpack(&self, v: &[f64]) -> Trajectory {
        let d = self.vars.dims;
        let n = self.vars.nodes;
        let mut states = DMatrix::zeros(n, d.nx);
        let mut algebraic = DMatrix::zeros(n, d.na);
        let mut controls = DMatrix::zeros(n, d.nu);
        for j in 0..n {
            let (x, z, u) = self.node_values(v, j);
            states.row_mut(j).copy_from_slice(&x);
            algebraic.row_mut(j).copy_from_slice(&z);
            controls.row_mut(j).copy_from_slice(&u);
        }
        Trajectory { times: self.times.clone(), states, algebraic, controls }
    }

    /// Inverse of [`unpack`](Self::unpack).
    pub fn pack(&self, traj: &Trajectory) -> Vec<f64> {
        let d = self.vars.dims;
        let mut v = vec![0.0; self.vars.len()];
        for j in 0..self.vars.nodes {
            let row = traj
                .states
                .row(j)
                .iter()
                .chain(traj.algebraic.row(j).iter())
                .chain(traj.controls.row(j).iter())
                .copied()
                .collect::<Vec<_>>();
            for c in 0..d.per_node() {
                v[j * d.per_node() + c] = (row[c] - self.scaling.offset[c]) / self.scaling.gain[c];
            }
        }
        v
    }

    /// Cold start: states held at the initial state, everything else zero.
    pub fn default_start(&self) -> Vec<f64> {
        let d = self.vars.dims;
        let n = self.vars.nodes;
        let mut states = DMatrix::zeros(n, d.nx);
        for j in 0..n {
            states.row_mut(j).copy_from_slice(&self.initial);
        }
        let traj = Trajectory {
            times: self.times.clone(),
            states,
            algebraic: DMatrix::zeros(n, d.na),
            controls: DMatrix::zeros(n, d.nu),
        };
        self.pack(&traj)
    }

    fn check_finite(values: &[f64], node: usize, what: &'static str) -> Result<(), EvalError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(EvalError { node: Some(node), what })
        }
    }

    /// `(T/2) sum_j w_j l(X_j, Z_j, U_j, t_j)`.
    pub fn eval_objective(&self, v: &[f64]) -> Result<f64, EvalError> {
        let w = self.grid.weights();
        let mut total = 0.0;
        for j in 0..self.vars.nodes {
            let (x, z, u) = self.node_values(v, j);
            Self::check_finite(&x, j, "decision variables")?;
            Self::check_finite(&z, j, "decision variables")?;
            Self::check_finite(&u, j, "decision variables")?;
            let l = self.problem.running_cost(&x, &z, &u, self.times[j]);
            Self::check_finite(&[l], j, "running cost")?;
            total += w[j] * l;
        }
        Ok(self.half_horizon() * total)
    }

    pub fn eval_constraints(&self, v: &[f64]) -> Result<DVector<f64>, EvalError> {
        let d = self.vars.dims;
        let n = self.vars.nodes;
        let hh = self.half_horizon();
        let states = self.physical_states(v);
        let dx = self.grid.diff_matrix() * &states;
        let mut c = DVector::zeros(self.cons.len());
        for j in 0..n {
            let (x, z, u) = self.node_values(v, j);
            Self::check_finite(&x, j, "decision variables")?;
            Self::check_finite(&z, j, "decision variables")?;
            Self::check_finite(&u, j, "decision variables")?;
            let f = self.problem.dynamics(&x, &z, &u, self.times[j]);
            Self::check_finite(&f, j, "dynamics")?;
            for i in 0..d.nx {
                c[self.cons.defect_row(j, i)] = dx[(j, i)] - hh * f[i];
            }
            if d.nh > 0 {
                let h = self.problem.path(&x, &z, &u, self.times[j]);
                Self::check_finite(&h, j, "path constraints")?;
                let (lo, _) = self.problem.path_bounds();
                for k in 0..d.nh {
                    c[self.cons.path_row(j, k)] = h[k] - lo[k];
                }
            }
        }
        for i in 0..d.nx {
            c[self.cons.boundary_row(i)] = states[(0, i)] - self.initial[i];
        }
        for (b, &(i, value)) in self.terminal.iter().enumerate() {
            c[self.cons.boundary_row(d.nx + b)] = states[(n - 1, i)] - value;
        }
        Ok(c)
    }

    pub fn eval_gradient(&self, v: &[f64]) -> Result<DVector<f64>, EvalError> {
        let d = self.vars.dims;
        let w = self.grid.weights();
        let hh = self.half_horizon();
        let mut g = DVector::zeros(self.vars.len());
        for j in 0..self.vars.nodes {
            let (x, z, u) = self.node_values(v, j);
            let t = self.times[j];
            let grad = match self.problem.cost_gradient(&x, &z, &u, t) {
                Some(g) => g,
                None => {
                    let fd = central_difference(&x, &z, &u, |x, z, u| vec![self.problem.running_cost(x, z, u, t)]);
                    fd.row(0).transpose()
                }
            };
            Self::check_finite(grad.as_slice(), j, "cost gradient")?;
            for c in 0..d.per_node() {
                g[j * d.per_node() + c] = hh * w[j] * grad[c] * self.scaling.gain[c];
            }
        }
        Ok(g)
    }

    /// Dense constraint Jacobian. The differentiation-matrix block is exact;
    /// problem-function blocks are analytic when the problem supplies them
    /// and central differences otherwise.
    pub fn eval_jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let d = self.vars.dims;
        let n = self.vars.nodes;
        let hh = self.half_horizon();
        let dm = self.grid.diff_matrix();
        let gain = &self.scaling.gain;
        let mut jac = DMatrix::zeros(self.cons.len(), self.vars.len());
        for j in 0..n {
            let (x, z, u) = self.node_values(v, j);
            let t = self.times[j];
            let fjac = match self.problem.dynamics_jacobian(&x, &z, &u, t) {
                Some(m) => m,
                None => central_difference(&x, &z, &u, |x, z, u| self.problem.dynamics(x, z, u, t)),
            };
            Self::check_finite(fjac.as_slice(), j, "dynamics jacobian")?;
            for i in 0..d.nx {
                let row = self.cons.defect_row(j, i);
                for k in 0..n {
                    jac[(row, self.vars.index(k, Channel::State(i)))] = dm[(j, k)] * gain[i];
                }
                for c in 0..d.per_node() {
                    jac[(row, j * d.per_node() + c)] -= hh * fjac[(i, c)] * gain[c];
                }
            }
            if d.nh > 0 {
                let hjac = match self.problem.path_jacobian(&x, &z, &u, t) {
                    Some(m) => m,
                    None => central_difference(&x, &z, &u, |x, z, u| self.problem.path(x, z, u, t)),
                };
                Self::check_finite(hjac.as_slice(), j, "path jacobian")?;
                for k in 0..d.nh {
                    let row = self.cons.path_row(j, k);
                    for c in 0..d.per_node() {
                        jac[(row, j * d.per_node() + c)] = hjac[(k, c)] * gain[c];
                    }
                }
            }
        }
        for i in 0..d.nx {
            jac[(self.cons.boundary_row(i), self.vars.index(0, Channel::State(i)))] = gain[i];
        }
        for (b, &(i, _)) in self.terminal.iter().enumerate() {
            jac[(self.cons.boundary_row(d.nx + b), self.vars.index(n - 1, Channel::State(i)))] = gain[i];
        }
        Ok(jac)
    }

    /// Jacobian with every problem-function block by central differences,
    /// ignoring analytic derivatives. Used to cross-check them.
    pub fn finite_difference_jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let fd = FiniteDifferenceOnly(self.problem);
        let nlp = NlpProblem { problem: &fd, ..self.clone_layout() };
        nlp.eval_jacobian(v)
    }

    fn clone_layout(&self) -> NlpProblem<'a> {
        NlpProblem {
            problem: self.problem,
            grid: self.grid,
            vars: self.vars,
            cons: self.cons.clone(),
            scaling: self.scaling.clone(),
            times: self.times.clone(),
            initial: self.initial.clone(),
            terminal: self.terminal.clone(),
        }
    }
}

/// Wraps a problem and hides its analytic derivatives.
struct FiniteDifferenceOnly<'a>(&'a dyn OcpProblem);

impl OcpProblem for FiniteDifferenceOnly<'_> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn horizon(&self) -> f64 {
        self.0.horizon()
    }
    fn dynamics(&self, x: &[f64], z: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        self.0.dynamics(x, z, u, t)
    }
    fn path(&self, x: &[f64], z: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        self.0.path(x, z, u, t)
    }
    fn path_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.0.path_bounds()
    }
    fn running_cost(&self, x: &[f64], z: &[f64], u: &[f64], t: f64) -> f64 {
        self.0.running_cost(x, z, u, t)
    }
    fn initial_state(&self) -> Vec<f64> {
        self.0.initial_state()
    }
    fn terminal_conditions(&self) -> Vec<(usize, f64)> {
        self.0.terminal_conditions()
    }
}

/// Pointwise derivatives of the problem functions with respect to the
/// stacked `(x, z, u)`, analytic where the problem supplies them.
#[derive(Debug, Clone)]
pub struct NodeDerivatives {
    pub cost: DVector<f64>,
    pub dynamics: DMatrix<f64>,
    pub path: DMatrix<f64>,
}

pub fn node_derivatives(problem: &dyn OcpProblem, x: &[f64], z: &[f64], u: &[f64], t: f64) -> NodeDerivatives {
    let cost = problem.cost_gradient(x, z, u, t).unwrap_or_else(|| {
        central_difference(x, z, u, |x, z, u| vec![problem.running_cost(x, z, u, t)])
            .row(0)
            .transpose()
    });
    let dynamics = problem
        .dynamics_jacobian(x, z, u, t)
        .unwrap_or_else(|| central_difference(x, z, u, |x, z, u| problem.dynamics(x, z, u, t)));
    let path = if problem.dims().nh == 0 {
        DMatrix::zeros(0, x.len() + z.len() + u.len())
    } else {
        problem
            .path_jacobian(x, z, u, t)
            .unwrap_or_else(|| central_difference(x, z, u, |x, z, u| problem.path(x, z, u, t)))
    };
    NodeDerivatives { cost, dynamics, path }
}

/// Central-difference Jacobian of a pointwise function with respect to the
/// stacked `(x, z, u)`, step `max(1e-6, 1e-6 |v_i|)`.
pub fn central_difference<F>(x: &[f64], z: &[f64], u: &[f64], f: F) -> DMatrix<f64>
where
    F: Fn(&[f64], &[f64], &[f64]) -> Vec<f64>,
{
    let (nx, na) = (x.len(), z.len());
    let mut v: Vec<f64> = x.iter().chain(z).chain(u).copied().collect();
    let eval = |v: &[f64]| f(&v[..nx], &v[nx..nx + na], &v[nx + na..]);
    let rows = eval(&v).len();
    let mut jac = DMatrix::zeros(rows, v.len());
    for c in 0..v.len() {
        let orig = v[c];
        let h = (1e-6 * orig.abs()).max(1e-6);
        v[c] = orig + h;
        let fp = eval(&v);
        v[c] = orig - h;
        let fm = eval(&v);
        v[c] = orig;
        for r in 0..rows {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

impl Nlp for NlpProblem<'_> {
    fn n_vars(&self) -> usize {
        self.vars.len()
    }

    fn n_cons(&self) -> usize {
        self.cons.len()
    }

    fn objective(&self, v: &[f64]) -> Result<f64, EvalError> {
        self.eval_objective(v)
    }

    fn gradient(&self, v: &[f64]) -> Result<DVector<f64>, EvalError> {
        self.eval_gradient(v)
    }

    fn constraints(&self, v: &[f64]) -> Result<DVector<f64>, EvalError> {
        self.eval_constraints(v)
    }

    fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        self.eval_jacobian(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{LinearQuadratic, Pendulum, PendulumParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// `l = 1` or `l = t` or `l = u^2`, `xdot = 1`, one state, one control.
    struct Toy {
        cost: fn(&[f64], &[f64], f64) -> f64,
        horizon: f64,
    }

    impl OcpProblem for Toy {
        fn dims(&self) -> Dims {
            Dims { nx: 1, na: 0, nu: 1, nh: 0 }
        }
        fn horizon(&self) -> f64 {
            self.horizon
        }
        fn dynamics(&self, _x: &[f64], _z: &[f64], _u: &[f64], _t: f64) -> Vec<f64> {
            vec![1.0]
        }
        fn running_cost(&self, _x: &[f64], _z: &[f64], u: &[f64], t: f64) -> f64 {
            (self.cost)(u, &[], t)
        }
        fn initial_state(&self) -> Vec<f64> {
            vec![0.0]
        }
    }

    #[test]
    fn pendulum_counts() {
        let p = Pendulum::new(PendulumParams::default()).unwrap();
        let g = Grid::new(2).unwrap();
        let nlp = transcribe(&p, &g).unwrap();
        assert_eq!(nlp.n_vars(), 18);
        assert_eq!(nlp.n_cons(), 19);
        assert!(matches!(transcribe(&p, &Grid::new(1).unwrap()), Err(TranscribeError::GridTooCoarse(1))));
    }

    #[test]
    fn layout_tags() {
        let p = Pendulum::new(PendulumParams::default()).unwrap();
        let g = Grid::new(4).unwrap();
        let nlp = transcribe(&p, &g).unwrap();
        let cl = nlp.constraint_layout();
        assert_eq!(cl.tag(0), ConstraintRow::Defect { node: 0, state: 0 });
        assert_eq!(cl.tag(7), ConstraintRow::Defect { node: 1, state: 3 });
        assert_eq!(cl.tag(20), ConstraintRow::Path { node: 0, index: 0 });
        assert_eq!(cl.tag(25), ConstraintRow::Boundary(0));
        let vl = nlp.var_layout();
        for idx in 0..vl.len() {
            let (node, ch) = vl.locate(idx);
            assert_eq!(vl.index(node, ch), idx);
        }
    }

    #[test]
    fn constant_cost_integrates_to_horizon() {
        let toy = Toy { cost: |_, _, _| 1.0, horizon: 3.7 };
        let g = Grid::new(6).unwrap();
        let nlp = transcribe(&toy, &g).unwrap();
        let v: Vec<f64> = (0..nlp.n_vars()).map(|i| (i as f64).sin()).collect();
        assert_abs_diff_eq!(nlp.eval_objective(&v).unwrap(), 3.7, epsilon = 1e-13);
    }

    #[test]
    fn control_squared_and_time_costs() {
        let sq = Toy { cost: |u, _, _| u[0] * u[0], horizon: 2.0 };
        let g = Grid::new(5).unwrap();
        let nlp = transcribe(&sq, &g).unwrap();
        let mut v = vec![0.0; nlp.n_vars()];
        for j in 0..g.len() {
            v[nlp.var_layout().index(j, Channel::Control(0))] = 1.0;
        }
        assert_abs_diff_eq!(nlp.eval_objective(&v).unwrap(), 2.0, epsilon = 1e-13);

        let lin = Toy { cost: |_, _, t| t, horizon: 2.5 };
        let nlp = transcribe(&lin, &g).unwrap();
        assert_abs_diff_eq!(nlp.eval_objective(&v).unwrap(), 2.5 * 2.5 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_state_has_zero_defects() {
        let toy = Toy { cost: |_, _, _| 0.0, horizon: 1.3 };
        let g = Grid::new(7).unwrap();
        let nlp = transcribe(&toy, &g).unwrap();
        let mut v = vec![0.0; nlp.n_vars()];
        for (j, t) in nlp.times().to_vec().into_iter().enumerate() {
            v[nlp.var_layout().index(j, Channel::State(0))] = t;
        }
        let c = nlp.eval_constraints(&v).unwrap();
        for j in 0..g.len() {
            assert!(c[nlp.constraint_layout().defect_row(j, 0)].abs() <= 1e-12);
        }
    }

    #[test]
    fn boundary_rows_report_offsets() {
        let lq = LinearQuadratic::default();
        let g = Grid::new(4).unwrap();
        let nlp = transcribe(&lq, &g).unwrap();
        let mut v = vec![0.0; nlp.n_vars()];
        v[nlp.var_layout().index(0, Channel::State(0))] = 0.25;
        v[nlp.var_layout().index(4, Channel::State(0))] = 0.5;
        let c = nlp.eval_constraints(&v).unwrap();
        let cl = nlp.constraint_layout();
        assert_eq!(c[cl.boundary_row(0)], 0.25);
        assert_eq!(c[cl.boundary_row(1)], -0.5);
    }

    #[test]
    fn constant_states_satisfy_defects_when_dynamics_vanish() {
        let mut p = PendulumParams::default();
        p.g = 0.0;
        let pend = Pendulum::new(p).unwrap();
        let g = Grid::new(5).unwrap();
        let nlp = transcribe(&pend, &g).unwrap();
        // Bob at rest on the circle, no force, no control: f = 0 everywhere.
        let v = nlp.default_start();
        let c = nlp.eval_constraints(&v).unwrap();
        assert!(c.amax() <= 1e-14);
    }

    #[test]
    fn nonfinite_reports_node() {
        let pend = Pendulum::new(PendulumParams::default()).unwrap();
        let g = Grid::new(4).unwrap();
        let nlp = transcribe(&pend, &g).unwrap();
        let mut v = nlp.default_start();
        v[nlp.var_layout().index(3, Channel::Control(0))] = f64::NAN;
        assert_eq!(nlp.eval_objective(&v).unwrap_err().node, Some(3));
        assert_eq!(nlp.eval_constraints(&v).unwrap_err().node, Some(3));
    }

    #[test]
    fn defect_block_structure() {
        let pend = Pendulum::new(PendulumParams::default()).unwrap();
        let g = Grid::new(4).unwrap();
        let nlp = transcribe(&pend, &g).unwrap();
        let v: Vec<f64> = (0..nlp.n_vars()).map(|i| 0.1 * (i as f64).cos()).collect();
        let jac = nlp.eval_jacobian(&v).unwrap();
        let (vl, cl) = (nlp.var_layout(), nlp.constraint_layout());
        for j in 0..5 {
            for k in 0..5 {
                if j != k {
                    // off-node state columns carry only D_jk.
                    assert_eq!(jac[(cl.defect_row(j, 2), vl.index(k, Channel::State(2)))], g.diff_matrix()[(j, k)]);
                    assert_eq!(jac[(cl.defect_row(j, 2), vl.index(k, Channel::State(0)))], 0.0);
                }
            }
            // x1dot = x2 does not depend on u.
            assert_eq!(jac[(cl.defect_row(j, 0), vl.index(j, Channel::Control(0)))], 0.0);
            let x = nlp.unpack(&v).state(j);
            let row = jac.row(cl.path_row(j, 0));
            let expect = [2.0 * x[0], 0.0, 2.0 * x[2], 0.0, 0.0, 0.0];
            for c in 0..6 {
                assert_abs_diff_eq!(row[j * 6 + c], expect[c], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn analytic_and_fd_jacobians_agree() {
        let pend = Pendulum::new(PendulumParams { alpha: 0.3, ..Default::default() }).unwrap();
        let g = Grid::new(6).unwrap();
        let nlp = transcribe(&pend, &g).unwrap();
        let v: Vec<f64> = (0..nlp.n_vars()).map(|i| 1.5 * ((i * 7) as f64).sin()).collect();
        let a = nlp.eval_jacobian(&v).unwrap();
        let f = nlp.finite_difference_jacobian(&v).unwrap();
        assert!((a - f).amax() <= 1e-5);
    }

    #[test]
    fn scaling_is_transparent() {
        let pend = Pendulum::new(PendulumParams::default()).unwrap();
        let g = Grid::new(4).unwrap();
        let plain = transcribe(&pend, &g).unwrap();
        let scaling = Scaling {
            offset: vec![0.0, 0.1, 2.0, 0.0, -2.0, 0.0],
            gain: vec![2.0, 3.0, 0.5, 1.0, 4.0, 10.0],
        };
        let scaled = transcribe_scaled(&pend, &g, scaling).unwrap();
        let v: Vec<f64> = (0..plain.n_vars()).map(|i| ((i * 3) as f64).cos()).collect();
        let traj = plain.unpack(&v);
        let w = scaled.pack(&traj);
        assert!((scaled.unpack(&w).states - &traj.states).amax() < 1e-14);
        assert_abs_diff_eq!(plain.eval_objective(&v).unwrap(), scaled.eval_objective(&w).unwrap(), epsilon = 1e-9);
        assert!((plain.eval_constraints(&v).unwrap() - scaled.eval_constraints(&w).unwrap()).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(vals in proptest::collection::vec(-10.0..10.0f64, 30)) {
            let pend = Pendulum::new(PendulumParams::default()).unwrap();
            let g = Grid::new(4).unwrap();
            let nlp = transcribe(&pend, &g).unwrap();
            let back = nlp.pack(&nlp.unpack(&vals));
            prop_assert_eq!(back, vals);
        }

        #[test]
        fn shift_in_unused_channel_leaves_rows(shift in -5.0..5.0f64, seed in 0..1000usize) {
            // Toy dynamics never read the control.
            let toy = Toy { cost: |u, _, _| u[0] * u[0], horizon: 1.5 };
            let g = Grid::new(5).unwrap();
            let nlp = transcribe(&toy, &g).unwrap();
            let v: Vec<f64> = (0..nlp.n_vars()).map(|i| ((i + seed) as f64).sin()).collect();
            let mut w = v.clone();
            for j in 0..g.len() {
                w[nlp.var_layout().index(j, Channel::Control(0))] += shift;
            }
            prop_assert_eq!(nlp.eval_constraints(&v).unwrap(), nlp.eval_constraints(&w).unwrap());
        }
    }
}
