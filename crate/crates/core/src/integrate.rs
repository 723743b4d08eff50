//! Dormand–Prince 5(4) propagation with PI step control and dense output,
//! plus the continuous control signal rebuilt from nodal values. Used only to
//! check solutions, never to produce them.

use thiserror::Error;

use crate::basis::{to_tau, Grid};
use crate::transcribe::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error("step limit {limit} reached at t = {t}")]
    MaxSteps { limit: usize, t: f64 },
    #[error("step size {h:e} underflowed at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite derivative at t = {0}")]
    NonFinite(f64),
    #[error("t = {t} outside [0, {horizon}]")]
    Domain { t: f64, horizon: f64 },
}

/// An initial-value problem `x' = rhs(t, x)` on `[t0, tf]`.
pub struct IvpSetup<F> {
    pub rhs: F,
    pub t0: f64,
    pub tf: f64,
    pub x0: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Ascending output times within `[t0, tf]`.
    pub samples: Vec<f64>,
}

impl<F> IvpSetup<F>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    pub fn new(rhs: F, t0: f64, tf: f64, x0: Vec<f64>) -> Self {
        Self { rhs, t0, tf, x0, rel_tol: 1e-8, abs_tol: 1e-10, max_steps: 100_000, samples: vec![tf] }
    }

    pub fn with_samples(mut self, samples: Vec<f64>) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |m: &str| Err(IntegrateError::Setup(m.into()));
        if !(self.t0.is_finite() && self.tf.is_finite() && self.tf > self.t0) {
            return bad("need finite t0 < tf");
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return bad("non-finite initial state");
        }
        if self.samples.iter().any(|&s| !(self.t0..=self.tf).contains(&s)) {
            return bad("sample time outside the interval");
        }
        if self.samples.windows(2).any(|w| w[1] < w[0]) {
            return bad("sample times must be ascending");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub times: Vec<f64>,
    /// One state per sample time.
    pub states: Vec<Vec<f64>>,
    pub stats: StepStats,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense-output coefficients (Hairer's contd5).
const DENSE: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const MAX_GROWTH: f64 = 10.0;
const MAX_SHRINK: f64 = 5.0;

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sk = atol + rtol * a.abs().max(b.abs());
            (e / sk).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for &(c, k) in terms {
        if c != 0.0 {
            for (o, v) in out.iter_mut().zip(k) {
                *o += h * c * v;
            }
        }
    }
    out
}

/// Propagate and return the state at every requested sample time.
pub fn propagate<F>(mut setup: IvpSetup<F>) -> Result<Propagation, IntegrateError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    setup.validate()?;
    let (t0, tf) = (setup.t0, setup.tf);
    let (rtol, atol) = (setup.rel_tol, setup.abs_tol);
    let span = tf - t0;
    let mut stats = StepStats::default();
    let mut eval = |t: f64, y: &[f64], stats: &mut StepStats| -> Result<Vec<f64>, IntegrateError> {
        stats.evaluations += 1;
        let f = (setup.rhs)(t, y);
        if f.len() != y.len() {
            return Err(IntegrateError::Setup(format!("rhs returned {} values for {} states", f.len(), y.len())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite(t));
        }
        Ok(f)
    };

    let mut t = t0;
    let mut y = setup.x0.clone();
    let mut k1 = eval(t, &y, &mut stats)?;
    let mut h = initial_step(&mut eval, t, &y, &k1, span, rtol, atol, &mut stats)?;

    let samples = setup.samples.clone();
    let mut out_states = Vec::with_capacity(samples.len());
    let mut next_sample = 0;
    while next_sample < samples.len() && samples[next_sample] == t0 {
        out_states.push(y.clone());
        next_sample += 1;
    }

    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut steps = 0;
    while next_sample < samples.len() {
        if steps >= setup.max_steps {
            return Err(IntegrateError::MaxSteps { limit: setup.max_steps, t });
        }
        if h < 1e-14 * span {
            return Err(IntegrateError::StepUnderflow { t, h });
        }
        // Stretch the step to land on tf rather than leave a sliver.
        let last = t + 1.01 * h >= tf;
        if last {
            h = tf - t;
        }
        steps += 1;

        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..6 {
            let terms: Vec<(f64, &[f64])> = (0..s).map(|r| (A[s][r], k[r].as_slice())).collect();
            let ys = axpy(&y, h, &terms);
            let ks = eval(t + C[s] * h, &ys, &mut stats)?;
            k.push(ks);
        }
        let terms: Vec<(f64, &[f64])> = (0..6).map(|r| (A[6][r], k[r].as_slice())).collect();
        let y_new = axpy(&y, h, &terms);
        let t_new = if last { tf } else { t + h };
        let k7 = eval(t_new, &y_new, &mut stats)?;
        k.push(k7);

        let err: Vec<f64> = (0..y.len()).map(|i| h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>()).collect();
        let err = error_norm(&err, &y, &y_new, rtol, atol);

        let fac11 = err.powf(EXPO);
        if err <= 1.0 {
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / MAX_GROWTH, MAX_SHRINK);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            stats.accepted += 1;

            while next_sample < samples.len() && samples[next_sample] <= t_new {
                let theta = ((samples[next_sample] - t) / h).clamp(0.0, 1.0);
                out_states.push(dense(&y, &y_new, &k, h, theta));
                next_sample += 1;
            }
            t = t_new;
            y = y_new;
            k1 = k.swap_remove(6);
            h = h_new;
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(MAX_SHRINK);
            last_rejected = true;
        }
    }
    Ok(Propagation { times: samples, states: out_states, stats })
}

/// Fourth-order continuous extension inside an accepted step.
fn dense(y0: &[f64], y1: &[f64], k: &[Vec<f64>], h: f64, theta: f64) -> Vec<f64> {
    if theta == 1.0 {
        return y1.to_vec();
    }
    let theta1 = 1.0 - theta;
    (0..y0.len())
        .map(|i| {
            let diff = y1[i] - y0[i];
            let bspl = h * k[0][i] - diff;
            let r4 = diff - h * k[6][i] - bspl;
            let r5 = h * (0..7).map(|s| DENSE[s] * k[s][i]).sum::<f64>();
            y0[i] + theta * (diff + theta1 * (bspl + theta * (r4 + theta1 * r5)))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn initial_step<E>(
    eval: &mut E,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
    rtol: f64,
    atol: f64,
    stats: &mut StepStats,
) -> Result<f64, IntegrateError>
where
    E: FnMut(f64, &[f64], &mut StepStats) -> Result<Vec<f64>, IntegrateError>,
{
    let zeros = vec![0.0; y.len()];
    let d0 = error_norm(y, y, &zeros, rtol, atol);
    let d1 = error_norm(f0, y, &zeros, rtol, atol);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1 = axpy(y, h0, &[(1.0, f0)]);
    let f1 = eval(t + h0, &y1, stats)?;
    let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = error_norm(&df, y, &zeros, rtol, atol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Continuous `(u(t), z(t))` from nodal values by barycentric interpolation.
#[derive(Debug, Clone)]
pub struct ControlSignal {
    grid: Grid,
    horizon: f64,
    controls: Vec<Vec<f64>>,
    algebraic: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn new(traj: &Trajectory, grid: &Grid, horizon: f64) -> Self {
        let columns = |m: &nalgebra::DMatrix<f64>| (0..m.ncols()).map(|c| m.column(c).iter().copied().collect()).collect();
        Self { grid: grid.clone(), horizon, controls: columns(&traj.controls), algebraic: columns(&traj.algebraic) }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn tau(&self, t: f64) -> Result<f64, IntegrateError> {
        let slack = 1e-12 * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(IntegrateError::Domain { t, horizon: self.horizon });
        }
        let tau = to_tau(t, self.horizon).clamp(-1.0, 1.0);
        // Node times do not map back to nodes bit-exactly.
        let snap = self.grid.nodes().iter().find(|&&x| (x - tau).abs() <= 4.0 * f64::EPSILON);
        Ok(snap.copied().unwrap_or(tau))
    }

    /// `(u(t), z(t))`.
    pub fn at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>), IntegrateError> {
        let tau = self.tau(t)?;
        let interp = |chs: &[Vec<f64>]| -> Vec<f64> {
            chs.iter().map(|v| self.grid.interpolate(v, tau).expect("tau clamped and lengths fixed")).collect()
        };
        Ok((interp(&self.controls), interp(&self.algebraic)))
    }
}
