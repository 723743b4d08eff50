//! Independent verification of a transcribed solution: open-loop propagation
//! of the interpolated control, necessary-condition residuals, and agreement
//! with the minimal-coordinate formulation of the pendulum.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::basis::Grid;
use crate::covector::{extract_duals, nc_report, pendulum_nc_report, DualTrajectory, NcReport};
use crate::integrate::{propagate, ControlSignal, IvpSetup, StepStats};
use crate::ocp::{lift_angle, OcpProblem, Pendulum, PendulumParams, ReducedPendulum};
use crate::sqp::{solve, NlpSolution, SolverConfig, SqpError, Termination};
use crate::transcribe::{transcribe, NlpProblem, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VvError {
    #[error("oracle: {0}")]
    Oracle(String),
}

/// Pass bounds. NC bounds are relative to the scales recorded in the
/// [`NcReport`]; the rest are absolute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub state_deviation: f64,
    pub path_residual: f64,
    pub nc_relative: f64,
    pub oracle_cost_relative: f64,
    pub oracle_trajectory: f64,
    pub dense_samples: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            state_deviation: 1e-4,
            path_residual: 1e-4,
            nc_relative: 1e-2,
            oracle_cost_relative: 1e-3,
            oracle_trajectory: 1e-3,
            dense_samples: 200,
        }
    }
}

impl Thresholds {
    /// For problems with a known analytic solution.
    pub fn tight() -> Self {
        Self { state_deviation: 1e-6, path_residual: 1e-6, nc_relative: 1e-6, ..Self::default() }
    }
}

/// Propagated trajectory compared with the nodal one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    /// Per state, max over node times of `|propagated - nodal|`.
    pub state_deviation: Vec<f64>,
    pub max_state_deviation: f64,
    /// Max `|h|` along the propagated trajectory, if the problem has path
    /// constraints.
    pub max_path_residual: Option<f64>,
    /// Why propagation failed, if it did.
    pub failure: Option<String>,
    #[serde(skip)]
    pub dense_times: Vec<f64>,
    #[serde(skip)]
    pub dense_states: Vec<Vec<f64>>,
    #[serde(skip)]
    pub path_trace: Vec<f64>,
    #[serde(skip)]
    pub stats: StepStats,
}

impl Feasibility {
    fn failed(nx: usize, why: String) -> Self {
        Self {
            state_deviation: vec![f64::INFINITY; nx],
            max_state_deviation: f64::INFINITY,
            max_path_residual: None,
            failure: Some(why),
            dense_times: vec![],
            dense_states: vec![],
            path_trace: vec![],
            stats: StepStats::default(),
        }
    }
}

/// Propagate the interpolated control (and algebraic channel) from the true
/// initial state and measure how far the result strays from the nodal
/// solution.
pub fn verify_feasibility(traj: &Trajectory, problem: &dyn OcpProblem, grid: &Grid, thresholds: &Thresholds) -> Feasibility {
    let d = problem.dims();
    let horizon = problem.horizon();
    let signal = ControlSignal::new(traj, grid, horizon);
    let m = thresholds.dense_samples.max(2);
    let dense: Vec<f64> = (0..m).map(|i| horizon * i as f64 / (m - 1) as f64).collect();
    let mut samples: Vec<f64> = traj.times.iter().copied().chain(dense.iter().copied()).collect();
    samples.sort_by(f64::total_cmp);
    samples.dedup();

    // Stage times never leave the horizon, but a domain error must surface as
    // a failed propagation rather than a panic.
    let rhs = |t: f64, x: &[f64]| match signal.at(t) {
        Ok((u, z)) => problem.dynamics(x, &z, &u, t),
        Err(_) => vec![f64::NAN; x.len()],
    };
    let setup = IvpSetup::new(rhs, 0.0, horizon, problem.initial_state()).with_samples(samples.clone());
    let out = match propagate(setup) {
        Ok(out) => out,
        Err(e) => return Feasibility::failed(d.nx, e.to_string()),
    };
    let at = |t: f64| &out.states[samples.binary_search_by(|s| s.total_cmp(&t)).expect("sample present")];

    let mut state_deviation = vec![0.0f64; d.nx];
    for (j, &t) in traj.times.iter().enumerate() {
        for (i, dev) in state_deviation.iter_mut().enumerate() {
            *dev = dev.max((at(t)[i] - traj.states[(j, i)]).abs());
        }
    }
    let dense_states: Vec<Vec<f64>> = dense.iter().map(|&t| at(t).clone()).collect();
    let path_trace: Vec<f64> = if d.nh == 0 {
        vec![]
    } else {
        dense
            .iter()
            .zip(&dense_states)
            .map(|(&t, x)| {
                let (u, z) = signal.at(t).expect("dense times lie in the horizon");
                problem.path(x, &z, &u, t).iter().fold(0.0f64, |m, h| m.max(h.abs()))
            })
            .collect()
    };
    let max_state_deviation = state_deviation.iter().copied().fold(0.0, f64::max);
    Feasibility {
        state_deviation,
        max_state_deviation,
        max_path_residual: (d.nh > 0).then(|| path_trace.iter().copied().fold(0.0, f64::max)),
        failure: None,
        dense_times: dense,
        dense_states,
        path_trace,
        stats: out.stats,
    }
}

/// Minimal-coordinate solution lifted to Cartesian form.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub cost: f64,
    pub status: Termination,
    /// Lifted states, `x5` from the angle, and the oracle's own control.
    pub trajectory: Trajectory,
}

pub fn run_oracle(p: &PendulumParams, grid: &Grid, cfg: &SolverConfig) -> Result<OracleSolution, VvError> {
    let reduced = ReducedPendulum::new(*p).map_err(|e| VvError::Oracle(e.to_string()))?;
    let nlp = transcribe(&reduced, grid).map_err(|e| VvError::Oracle(e.to_string()))?;
    let sol = solve(&nlp, &nlp.default_start(), cfg).map_err(|e: SqpError| VvError::Oracle(e.to_string()))?;
    let angle = nlp.unpack(&sol.primal);
    let n = grid.len();
    let mut states = DMatrix::zeros(n, 4);
    let mut algebraic = DMatrix::zeros(n, 1);
    for j in 0..n {
        let (x, x5) = lift_angle(angle.states[(j, 0)], angle.states[(j, 1)], p);
        for i in 0..4 {
            states[(j, i)] = x[i];
        }
        algebraic[(j, 0)] = x5;
    }
    Ok(OracleSolution {
        cost: sol.objective,
        status: sol.status,
        trajectory: Trajectory { times: angle.times, states, algebraic, controls: angle.controls },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub cost: f64,
    pub status: Termination,
    /// `|J - J_oracle| / max(|J_oracle|, 1)`.
    pub cost_gap_relative: f64,
    /// Max over nodes of `|x1 - x1_oracle|` and `|x3 - x3_oracle|`.
    pub trajectory_gap: f64,
    /// The oracle held to the same propagation standard.
    pub feasibility: Feasibility,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl TestResult {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value <= threshold }
    }

    fn flag(name: &str, pass: bool) -> Self {
        Self { name: name.into(), value: if pass { 0.0 } else { 1.0 }, threshold: 0.0, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VvReport {
    pub thresholds: Thresholds,
    pub feasibility: Feasibility,
    pub nc: Option<NcReport>,
    pub oracle: Option<OracleReport>,
    /// Why a stage could not run.
    pub notes: Vec<String>,
    pub tests: Vec<TestResult>,
}

impl VvReport {
    pub fn passed(&self) -> bool {
        self.tests.iter().all(|t| t.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.tests.iter().filter(|t| !t.pass).map(|t| t.name.as_str()).collect()
    }
}

/// What the battery knows about the problem beyond its [`OcpProblem`]
/// interface.
#[derive(Debug, Clone, Copy)]
pub enum Subject<'a> {
    Pendulum(&'a PendulumParams),
    Generic,
}

/// The full battery: convergence, propagation, necessary conditions, and for
/// the pendulum the oracle. Never fails; problems are reported as failed
/// tests.
pub fn full_report(
    sol: &NlpSolution,
    nlp: &NlpProblem,
    subject: Subject,
    solver: &SolverConfig,
    thresholds: &Thresholds,
) -> VvReport {
    let problem = nlp.problem();
    let grid = nlp.grid();
    let traj = nlp.unpack(&sol.primal);
    let mut notes = Vec::new();
    let mut tests = vec![TestResult::flag("converged", sol.is_success())];

    let feasibility = verify_feasibility(&traj, problem, grid, thresholds);
    if let Some(why) = &feasibility.failure {
        notes.push(format!("propagation: {why}"));
    }
    tests.push(TestResult::at_most("state_deviation", feasibility.max_state_deviation, thresholds.state_deviation));
    if problem.dims().nh > 0 {
        tests.push(TestResult::at_most(
            "path_residual",
            feasibility.max_path_residual.unwrap_or(f64::INFINITY),
            thresholds.path_residual,
        ));
    }

    let nc = match extract_duals(sol, nlp) {
        Ok(duals) => Some(nc_for(&traj, &duals, grid, problem, subject)),
        Err(e) => {
            notes.push(format!("costates: {e}"));
            None
        }
    };
    nc_tests(nc.as_ref(), thresholds.nc_relative, &mut tests);

    let oracle = match subject {
        Subject::Pendulum(p) => match run_oracle(p, grid, solver) {
            Ok(o) => {
                let report = oracle_report(&traj, sol.objective, &o, p, grid, thresholds);
                tests.push(TestResult::flag("oracle_converged", o.status.is_success()));
                tests.push(TestResult::at_most("oracle_cost", report.cost_gap_relative, thresholds.oracle_cost_relative));
                tests.push(TestResult::at_most("oracle_trajectory", report.trajectory_gap, thresholds.oracle_trajectory));
                tests.push(TestResult::at_most(
                    "oracle_state_deviation",
                    report.feasibility.max_state_deviation,
                    thresholds.state_deviation,
                ));
                tests.push(TestResult::at_most(
                    "oracle_path_residual",
                    report.feasibility.max_path_residual.unwrap_or(f64::INFINITY),
                    thresholds.path_residual,
                ));
                Some(report)
            }
            Err(e) => {
                notes.push(e.to_string());
                tests.push(TestResult::flag("oracle_converged", false));
                None
            }
        },
        Subject::Generic => None,
    };

    VvReport { thresholds: *thresholds, feasibility, nc, oracle, notes, tests }
}

fn nc_for(traj: &Trajectory, duals: &DualTrajectory, grid: &Grid, problem: &dyn OcpProblem, subject: Subject) -> NcReport {
    match subject {
        Subject::Pendulum(p) => pendulum_nc_report(traj, duals, grid, problem, p),
        Subject::Generic => nc_report(traj, duals, grid, problem),
    }
}

fn nc_tests(nc: Option<&NcReport>, rel: f64, tests: &mut Vec<TestResult>) {
    let Some(nc) = nc else {
        for name in ["nc_control", "nc_adjoint", "nc_transversality", "nc_complementarity"] {
            tests.push(TestResult::flag(name, false));
        }
        return;
    };
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    tests.push(TestResult::at_most("nc_control", nc.control_stationarity, rel * nc.control_scale));
    if let Some(r) = nc.algebraic_stationarity {
        tests.push(TestResult::at_most("nc_algebraic", r, rel * nc.algebraic_scale));
    }
    tests.push(TestResult::at_most("nc_adjoint", max(&nc.adjoint), rel * nc.costate_scale));
    tests.push(TestResult::at_most("nc_transversality", max(&nc.terminal_costates), rel * nc.costate_scale));
    tests.push(TestResult::flag("nc_complementarity", nc.complementarity));
}

fn oracle_report(
    traj: &Trajectory,
    cost: f64,
    oracle: &OracleSolution,
    p: &PendulumParams,
    grid: &Grid,
    thresholds: &Thresholds,
) -> OracleReport {
    let gap = (0..traj.times.len())
        .flat_map(|j| [0, 2].map(|i| (traj.states[(j, i)] - oracle.trajectory.states[(j, i)]).abs()))
        .fold(0.0, f64::max);
    let pendulum = Pendulum::new(*p).expect("parameters already validated by the oracle");
    OracleReport {
        cost: oracle.cost,
        status: oracle.status,
        cost_gap_relative: (cost - oracle.cost).abs() / oracle.cost.abs().max(1.0),
        trajectory_gap: gap,
        feasibility: verify_feasibility(&oracle.trajectory, &pendulum, grid, thresholds),
    }
}
