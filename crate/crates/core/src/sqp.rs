//! Dense equality-constrained SQP.
//!
//! Each iteration solves the regularized KKT system for the step and the
//! multiplier increment
//!
//! ```text
//! [ H + dx I   A^T   ] [ p  ]   [ -grad L ]
//! [ A         -dc I  ] [ dl ] = [ -c      ]
//! ```
//!
//! then backtracks on the l1 merit function `f + rho |c|_1`. `H` is either the
//! Lagrangian Hessian shifted until it is positive definite on the null space
//! of `A`, or a damped BFGS approximation. The Lagrangian is `f + l^T c`
//! everywhere in this crate.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Failure to evaluate a problem function.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("non-finite {what}{}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
pub struct EvalError {
    pub node: Option<usize>,
    pub what: &'static str,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqpError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("KKT system singular even at regularization {0:e}")]
    SingularKkt(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A smooth equality-constrained program `min f(v) s.t. c(v) = 0`.
pub trait Nlp {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn objective(&self, v: &[f64]) -> Result<f64, EvalError>;
    fn gradient(&self, v: &[f64]) -> Result<DVector<f64>, EvalError>;
    fn constraints(&self, v: &[f64]) -> Result<DVector<f64>, EvalError>;
    fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>, EvalError>;

    /// Hessian of `f + lambda^T c`. `None` means the solver differences the
    /// Lagrangian gradient itself.
    fn lagrangian_hessian(&self, _v: &[f64], _lambda: &DVector<f64>) -> Option<Result<DMatrix<f64>, EvalError>> {
        None
    }
}

/// How the SQP subproblem models second-order information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Lagrangian Hessian, convexified on the constraint null space.
    Exact,
    /// Powell-damped BFGS, reset to a scaled identity on curvature failure.
    Bfgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Infinity norm of the Lagrangian gradient.
    pub tol_stationarity: f64,
    /// Infinity norm of the constraints.
    pub tol_feasibility: f64,
    pub primal_regularization: f64,
    pub dual_regularization: f64,
    pub penalty_growth: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub hessian: HessianMode,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol_stationarity: 1e-8,
            tol_feasibility: 1e-9,
            primal_regularization: 1e-8,
            dual_regularization: 1e-8,
            penalty_growth: 2.0,
            backtrack: 0.5,
            min_step: 1e-12,
            hessian: HessianMode::Exact,
            verbose: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("tol_stationarity", self.tol_stationarity),
            ("tol_feasibility", self.tol_feasibility),
            ("primal_regularization", self.primal_regularization),
            ("dual_regularization", self.dual_regularization),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_iter < 1 {
            return Err("max_iter must be at least 1".into());
        }
        if !(self.penalty_growth > 1.0) {
            return Err("penalty_growth must exceed 1".into());
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err("backtrack must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
    SingularKkt,
    Stalled,
}

impl Termination {
    pub fn is_success(self) -> bool {
        self == Termination::Converged
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub infeasibility: f64,
    pub stationarity: f64,
    pub step: f64,
    pub penalty: f64,
    /// Merit at the start and end of the step, same penalty.
    pub merit_before: f64,
    pub merit_after: f64,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub primal: Vec<f64>,
    /// Constraint multipliers, ordered like the constraint vector.
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub infeasibility: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub status: Termination,
    pub history: Vec<IterRecord>,
}

impl NlpSolution {
    pub fn is_success(&self) -> bool {
        self.status.is_success()
    }
}

const MAX_REGULARIZATION: f64 = 1e-2;
const KKT_RESIDUAL_TOL: f64 = 1e-10;
const ARMIJO: f64 = 1e-4;
/// Consecutive iterations without an accepted primal step before giving up.
const MAX_STUCK: usize = 3;

/// Solve the regularized saddle-point system for the step and the new
/// multipliers. Regularization escalates by 10x up to 1e-2 on failure.
pub fn kkt_solve(
    hess: &DMatrix<f64>,
    jac: &DMatrix<f64>,
    grad: &DVector<f64>,
    cons: &DVector<f64>,
    primal_reg: f64,
    dual_reg: f64,
) -> Result<(DVector<f64>, DVector<f64>), SqpError> {
    let n = hess.nrows();
    let m = jac.nrows();
    if hess.ncols() != n || grad.len() != n || jac.ncols() != n || cons.len() != m {
        return Err(SqpError::Dimension(format!(
            "H {}x{}, A {}x{}, grad {}, c {}",
            hess.nrows(),
            hess.ncols(),
            jac.nrows(),
            jac.ncols(),
            grad.len(),
            cons.len()
        )));
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-grad));
    rhs.rows_mut(n, m).copy_from(&(-cons));

    let (mut dx, mut dc) = (primal_reg, dual_reg);
    loop {
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(hess);
        for i in 0..n {
            kkt[(i, i)] += dx;
        }
        kkt.view_mut((0, n), (n, m)).copy_from(&jac.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(jac);
        for i in 0..m {
            kkt[(n + i, n + i)] = -dc;
        }
        let lu = kkt.clone().lu();
        if let Some(mut sol) = lu.solve(&rhs) {
            // One round of iterative refinement.
            let r = &rhs - &kkt * &sol;
            if let Some(corr) = lu.solve(&r) {
                sol += corr;
            }
            let resid = (&kkt * &sol - &rhs).norm();
            let scale = kkt.norm() * sol.norm() + rhs.norm();
            if sol.iter().all(|v| v.is_finite()) && resid <= KKT_RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE) {
                return Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()));
            }
        }
        if dx.max(dc) >= MAX_REGULARIZATION {
            return Err(SqpError::SingularKkt(dx.max(dc)));
        }
        dx = (dx * 10.0).min(MAX_REGULARIZATION);
        dc = (dc * 10.0).min(MAX_REGULARIZATION);
    }
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
}

impl Point {
    fn eval(nlp: &dyn Nlp, x: DVector<f64>) -> Result<Self, EvalError> {
        let v = x.as_slice();
        Ok(Self { f: nlp.objective(v)?, g: nlp.gradient(v)?, c: nlp.constraints(v)?, a: nlp.jacobian(v)?, x })
    }

    fn lagrangian_gradient(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.g + self.a.tr_mul(lambda)
    }
}

fn merit(f: f64, c: &DVector<f64>, rho: f64) -> f64 {
    f + rho * c.lp_norm(1)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Powell-damped BFGS update. Returns `false` when curvature information is
/// unusable and the caller should reset.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> bool {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    let sy = s.dot(y);
    if !(sbs > 0.0) || !sbs.is_finite() {
        return false;
    }
    let r = if sy >= 0.2 * sbs {
        y.clone()
    } else {
        let theta = 0.8 * sbs / (sbs - sy);
        theta * y + (1.0 - theta) * &bs
    };
    let sr = s.dot(&r);
    if !(sr > 1e-14 * s.norm() * r.norm()) || !sr.is_finite() {
        return false;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
    true
}

/// Finite-difference Hessian of the Lagrangian from gradient and Jacobian
/// evaluations, symmetrized.
pub fn finite_difference_hessian(nlp: &dyn Nlp, x: &[f64], lambda: &DVector<f64>) -> Result<DMatrix<f64>, EvalError> {
    let n = x.len();
    let mut v = x.to_vec();
    let mut h = DMatrix::zeros(n, n);
    let grad_l = |v: &[f64]| -> Result<DVector<f64>, EvalError> { Ok(nlp.gradient(v)? + nlp.jacobian(v)?.tr_mul(lambda)) };
    for j in 0..n {
        let orig = v[j];
        let step = 1e-6 * orig.abs().max(1.0);
        v[j] = orig + step;
        let gp = grad_l(&v)?;
        v[j] = orig - step;
        let gm = grad_l(&v)?;
        v[j] = orig;
        h.set_column(j, &((gp - gm) / (2.0 * step)));
    }
    Ok(0.5 * (&h + h.transpose()))
}

/// Smallest eigenvalue of `H` restricted to the null space of `A`.
pub fn reduced_min_eigenvalue(hess: &DMatrix<f64>, jac: &DMatrix<f64>) -> f64 {
    let n = hess.nrows();
    let mut proj = DMatrix::identity(n, n);
    if jac.nrows() > 0 {
        let svd = jac.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let smax = svd.singular_values.max();
        let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
        for (k, &sv) in svd.singular_values.iter().enumerate() {
            if sv > tol {
                let row = v_t.row(k);
                proj -= row.transpose() * row;
            }
        }
    }
    let range = DMatrix::identity(n, n) - &proj;
    // Push the range-space directions above every null-space eigenvalue.
    let lift = hess.norm() + 1.0;
    let reduced = &proj * hess * &proj + range * lift;
    let sym = 0.5 * (&reduced + reduced.transpose());
    sym.symmetric_eigenvalues().min()
}

/// Shift that makes the reduced Hessian at least `floor` positive definite.
fn inertia_shift(hess: &DMatrix<f64>, jac: &DMatrix<f64>, floor: f64) -> f64 {
    let lmin = reduced_min_eigenvalue(hess, jac);
    if lmin >= floor {
        0.0
    } else {
        // Mirror negative curvature rather than flattening it to the floor,
        // which would leave a nearly singular reduced Hessian.
        floor - lmin + lmin.abs().max(0.0) * if lmin < 0.0 { 1.0 } else { 0.0 }
    }
}

enum HessianModel {
    Exact,
    Bfgs { matrix: DMatrix<f64>, fresh: bool },
}

impl HessianModel {
    fn reset(&mut self) {
        if let HessianModel::Bfgs { matrix, fresh } = self {
            *matrix = DMatrix::identity(matrix.nrows(), matrix.ncols());
            *fresh = true;
        }
    }

    fn matrix(&self, nlp: &dyn Nlp, pt: &Point, lambda: &DVector<f64>, cfg: &SolverConfig) -> Result<DMatrix<f64>, EvalError> {
        match self {
            HessianModel::Bfgs { matrix, .. } => Ok(matrix.clone()),
            HessianModel::Exact => {
                let mut h = match nlp.lagrangian_hessian(pt.x.as_slice(), lambda) {
                    Some(h) => h?,
                    None => finite_difference_hessian(nlp, pt.x.as_slice(), lambda)?,
                };
                let floor = cfg.primal_regularization.max(1e-8 * h.amax());
                let shift = inertia_shift(&h, &pt.a, floor);
                for i in 0..h.nrows() {
                    h[(i, i)] += shift;
                }
                Ok(h)
            }
        }
    }

    fn update(&mut self, s: &DVector<f64>, y: &DVector<f64>) {
        if let HessianModel::Bfgs { matrix, fresh } = self {
            if *fresh {
                let sy = s.dot(y);
                if sy > 0.0 {
                    *matrix = DMatrix::identity(s.len(), s.len()) * (y.dot(y) / sy);
                }
            }
            if bfgs_update(matrix, s, y) {
                *fresh = false;
            } else {
                self.reset();
            }
        }
    }
}

/// Run SQP from `start`. Evaluation failures at the starting point are
/// errors; every other outcome is reported through the solution status.
pub fn solve(nlp: &dyn Nlp, start: &[f64], cfg: &SolverConfig) -> Result<NlpSolution, SqpError> {
    let n = nlp.n_vars();
    let m = nlp.n_cons();
    if start.len() != n {
        return Err(SqpError::Dimension(format!("start has {} entries, problem has {n} variables", start.len())));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(EvalError { node: None, what: "starting point" }.into());
    }
    let mut pt = Point::eval(nlp, DVector::from_column_slice(start))?;
    let mut lambda = DVector::zeros(m);
    let mut model = match cfg.hessian {
        HessianMode::Exact => HessianModel::Exact,
        HessianMode::Bfgs => HessianModel::Bfgs { matrix: DMatrix::identity(n, n), fresh: true },
    };
    let mut rho = 1.0_f64;
    let mut stuck = 0;
    let mut history = Vec::new();

    let kkt_error = |p: &Point, l: &DVector<f64>| (inf_norm(&p.c), inf_norm(&p.lagrangian_gradient(l)));
    let score = |(inf, stat): (f64, f64)| (inf / cfg.tol_feasibility).max(stat / cfg.tol_stationarity);

    let mut best = (pt.x.clone(), lambda.clone(), pt.f, kkt_error(&pt, &lambda));
    let mut status = Termination::MaxIterations;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let (inf, stat) = kkt_error(&pt, &lambda);
        if iter > 1 && inf <= cfg.tol_feasibility && stat <= cfg.tol_stationarity {
            status = Termination::Converged;
            break;
        }
        let hess = model.matrix(nlp, &pt, &lambda, cfg)?;
        // Solved for the multiplier increment so the dual regularization
        // vanishes at a KKT point instead of biasing feasibility by dc * l.
        let grad_l = pt.lagrangian_gradient(&lambda);
        let (p, lambda_new) = match kkt_solve(&hess, &pt.a, &grad_l, &pt.c, cfg.primal_regularization, cfg.dual_regularization) {
            Ok((p, dl)) => (p, &lambda + dl),
            Err(SqpError::SingularKkt(_)) => {
                status = Termination::SingularKkt;
                break;
            }
            Err(e) => return Err(e),
        };

        let c1 = pt.c.lp_norm(1);
        // Predicted merit change from the linear constraint model.
        let linear_c1 = (&pt.c + &pt.a * &p).lp_norm(1);
        let drop = c1 - linear_c1;
        let mut target = 1.1 * inf_norm(&lambda_new) + 1e-8;
        if drop > 0.0 {
            // Large enough that the step is a descent direction for the merit
            // even when H has negative curvature off the null space.
            let curvature = 0.5 * p.dot(&(&hess * &p)).max(0.0);
            target = target.max((pt.g.dot(&p) + curvature) / (0.9 * drop));
        }
        while rho < target {
            rho *= cfg.penalty_growth;
        }
        let phi0 = merit(pt.f, &pt.c, rho);
        let slope = pt.g.dot(&p) + rho * (linear_c1 - c1);

        let accepted = if slope > 0.0 {
            None
        } else {
            let mut alpha = 1.0;
            loop {
                let trial = &pt.x + alpha * &p;
                let ok = nlp
                    .objective(trial.as_slice())
                    .and_then(|f| nlp.constraints(trial.as_slice()).map(|c| (f, c)));
                if let Ok((f, c)) = ok {
                    let phi = merit(f, &c, rho);
                    if phi.is_finite() && phi <= phi0 + ARMIJO * alpha * slope {
                        break Some((trial, phi, alpha));
                    }
                }
                alpha *= cfg.backtrack;
                if alpha < cfg.min_step {
                    break None;
                }
            }
        };
        let Some((trial, phi_new, alpha)) = accepted else {
            // No primal progress: keep the multiplier update and rebuild the
            // Hessian model.
            lambda = lambda_new;
            model.reset();
            stuck += 1;
            if stuck >= MAX_STUCK {
                status = Termination::LineSearchFailure;
                break;
            }
            continue;
        };
        stuck = 0;

        let next = Point::eval(nlp, trial)?;
        let s = &next.x - &pt.x;
        if let HessianModel::Bfgs { .. } = model {
            let y = next.lagrangian_gradient(&lambda_new) - pt.lagrangian_gradient(&lambda_new);
            model.update(&s, &y);
        }

        let step_norm = inf_norm(&s);
        pt = next;
        lambda = lambda_new;
        let (inf, stat) = kkt_error(&pt, &lambda);
        history.push(IterRecord {
            iter,
            objective: pt.f,
            infeasibility: inf,
            stationarity: stat,
            step: alpha,
            penalty: rho,
            merit_before: phi0,
            merit_after: phi_new,
        });
        if cfg.verbose {
            eprintln!(
                "iter {iter:4}  f {:+.10e}  |c| {inf:.3e}  |gradL| {stat:.3e}  step {alpha:.3e}  rho {rho:.3e}",
                pt.f
            );
        }
        if score((inf, stat)) < score(best.3) {
            best = (pt.x.clone(), lambda.clone(), pt.f, (inf, stat));
        }
        if inf <= cfg.tol_feasibility && stat <= cfg.tol_stationarity {
            status = Termination::Converged;
            break;
        }
        if step_norm <= 1e-15 * (1.0 + inf_norm(&pt.x)) {
            status = Termination::Stalled;
            break;
        }
    }

    let (x, lam, f, (inf, stat)) = if status.is_success() {
        let e = kkt_error(&pt, &lambda);
        (pt.x, lambda, pt.f, e)
    } else {
        best
    };
    Ok(NlpSolution {
        primal: x.as_slice().to_vec(),
        multipliers: lam.as_slice().to_vec(),
        objective: f,
        infeasibility: inf,
        stationarity: stat,
        iterations,
        status,
        history,
    })
}
