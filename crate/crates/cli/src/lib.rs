//! `psdae` command line: `solve` runs transcribe -> SQP -> costates -> V&V and
//! writes `solution.csv`, `report.json` and optionally `figures/*.svg`;
//! `plot` redraws the figures from an existing `solution.csv`.

pub mod config;
pub mod plots;
pub mod svg;
pub mod table;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use psdae::basis::Grid;
use psdae::covector::extract_duals;
use psdae::ocp::{OcpProblem, Pendulum, PendulumParams, ReducedPendulum};
use psdae::sqp::solve;
use psdae::transcribe::transcribe;
use psdae::vv::{full_report, run_oracle, Subject, Thresholds};
use serde_json::json;

pub use config::{ConfigError, ProblemKind, RunConfig};
pub use plots::emit_plots;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVE_FAILED: i32 = 1;
pub const EXIT_VV_FAILED: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_SCHEMA: i32 = 65;

#[derive(Debug, Parser)]
#[command(name = "psdae", version, about = "Pseudospectral optimal control of the constrained pendulum, with independent verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve, verify, and write solution.csv and report.json.
    Solve(SolveArgs),
    /// Draw the figures from an existing solution.csv.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// Damping.
    #[arg(long)]
    a: Option<f64>,
    /// Control weight.
    #[arg(long)]
    c: Option<f64>,
    /// Tracking weight.
    #[arg(long)]
    d: Option<f64>,
    /// Gravity.
    #[arg(long)]
    g: Option<f64>,
    /// Rod length.
    #[arg(long = "L")]
    length: Option<f64>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Phase lead of the target.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
}

impl ParamArgs {
    fn settings(&self, map: &mut BTreeMap<String, String>) {
        let pairs = [
            ("a", self.a),
            ("c", self.c),
            ("d", self.d),
            ("g", self.g),
            ("L", self.length),
            ("T", self.horizon),
            ("alpha", self.alpha),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                map.insert(k.into(), v.to_string());
            }
        }
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    problem: Option<ProblemKind>,
    #[command(flatten)]
    params: ParamArgs,
    /// Terminal state of the LQ problem.
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    /// Polynomial order N (N+1 nodes).
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write figures/*.svg.
    #[arg(long)]
    plots: bool,
    /// Log SQP iterations to stderr.
    #[arg(long)]
    verbose: bool,
    /// Flat key=value file; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// exact or bfgs.
    #[arg(long)]
    hessian: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

impl SolveArgs {
    fn into_config(self) -> Result<RunConfig, ConfigError> {
        let mut settings = match &self.config {
            Some(path) => config::read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let mut flags = BTreeMap::new();
        if let Some(p) = self.problem {
            flags.insert("problem".into(), p.name().into());
        }
        self.params.settings(&mut flags);
        let opt = [
            ("b", self.b.map(|v| v.to_string())),
            ("nodes", self.nodes.map(|v| v.to_string())),
            ("out", self.out.map(|v| v.to_string_lossy().into_owned())),
            ("max_iter", self.max_iter.map(|v| v.to_string())),
            ("hessian", self.hessian),
            ("seed", self.seed.map(|v| v.to_string())),
            ("plots", self.plots.then(|| "true".into())),
            ("verbose", self.verbose.then(|| "true".into())),
        ];
        for (k, v) in opt {
            if let Some(v) = v {
                flags.insert(k.into(), v);
            }
        }
        settings.extend(flags);
        RunConfig::from_settings(&settings)
    }
}

/// Parse arguments and run. Never panics on bad input; every outcome is an
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Solve(args) => match args.into_config() {
            Ok(cfg) => run(&cfg),
            Err(e) => {
                eprintln!("psdae: {e}");
                EXIT_CONFIG
            }
        },
        Command::Plot(args) => {
            let mut settings = BTreeMap::new();
            args.params.settings(&mut settings);
            let params = match RunConfig::from_settings(&settings) {
                Ok(cfg) => cfg.pendulum,
                Err(e) => {
                    eprintln!("psdae: {e}");
                    return EXIT_CONFIG;
                }
            };
            plot(&args.csv, &args.out, &params)
        }
    }
}

/// `plot` subcommand.
pub fn plot(csv: &Path, out: &Path, params: &PendulumParams) -> i32 {
    match emit_plots(csv, out, params) {
        Ok(files) => {
            println!("wrote {} figures to {}", files.len(), out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("psdae: {e}");
            if e.is_schema() {
                EXIT_SCHEMA
            } else {
                EXIT_CONFIG
            }
        }
    }
}

/// `solve` subcommand: exit 0 iff the solve converged and every V&V test
/// passed, 2 if it produced a solution that failed V&V, 1 if the solver or
/// an output stage failed outright, 64 on configuration errors.
pub fn run(cfg: &RunConfig) -> i32 {
    if let Err(e) = cfg.validate() {
        eprintln!("psdae: {e}");
        return EXIT_CONFIG;
    }
    if let Err(e) = std::fs::create_dir_all(&cfg.out) {
        eprintln!("psdae: cannot create {}: {e}", cfg.out.display());
        return EXIT_CONFIG;
    }
    let grid = match Grid::new(cfg.nodes) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("psdae: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match cfg.problem {
        ProblemKind::Pendulum => Pendulum::new(cfg.pendulum)
            .map_err(|e| e.to_string())
            .map(|p| execute(cfg, &p, &grid, Subject::Pendulum(&cfg.pendulum), &Thresholds::default())),
        ProblemKind::Lq => Ok(execute(cfg, &cfg.lq, &grid, Subject::Generic, &Thresholds::tight())),
        ProblemKind::ReducedPendulum => ReducedPendulum::new(cfg.pendulum)
            .map_err(|e| e.to_string())
            .map(|p| execute(cfg, &p, &grid, Subject::Generic, &Thresholds::default())),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("psdae: {e}");
            EXIT_CONFIG
        }
    }
}

fn parameters(cfg: &RunConfig) -> serde_json::Value {
    match cfg.problem {
        ProblemKind::Lq => json!({ "T": cfg.lq.horizon, "b": cfg.lq.target }),
        _ => {
            let p = &cfg.pendulum;
            json!({ "a": p.a, "c": p.c, "d": p.d, "g": p.g, "L": p.length, "alpha": p.alpha, "T": p.horizon })
        }
    }
}

fn write_report(cfg: &RunConfig, report: &serde_json::Value) -> Result<(), String> {
    let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    std::fs::write(cfg.out.join("report.json"), text + "\n").map_err(|e| format!("report.json: {e}"))
}

fn execute(cfg: &RunConfig, problem: &dyn OcpProblem, grid: &Grid, subject: Subject, thresholds: &Thresholds) -> i32 {
    let started = Instant::now();
    let header = json!({
        "problem": cfg.problem.name(),
        "parameters": parameters(cfg),
        "nodes": cfg.nodes,
        "solver": cfg.solver,
        "seed": cfg.seed,
    });
    let nlp = match transcribe(problem, grid) {
        Ok(nlp) => nlp,
        Err(e) => {
            eprintln!("psdae: {e}");
            return EXIT_CONFIG;
        }
    };
    let sol = match solve(&nlp, &nlp.default_start(), &cfg.solver) {
        Ok(sol) => sol,
        Err(e) => {
            eprintln!("psdae: solve failed: {e}");
            let mut report = header;
            report["status"] = json!("error");
            report["error"] = json!(e.to_string());
            report["wall_clock_seconds"] = json!(started.elapsed().as_secs_f64());
            report["exit_code"] = json!(EXIT_SOLVE_FAILED);
            let _ = write_report(cfg, &report);
            return EXIT_SOLVE_FAILED;
        }
    };
    let vv = full_report(&sol, &nlp, subject, &cfg.solver, thresholds);

    let traj = nlp.unpack(&sol.primal);
    let table = match cfg.problem {
        // Angle costates have no Cartesian columns; write the lifted states.
        ProblemKind::ReducedPendulum => match run_lifted(cfg, grid) {
            Some(t) => t,
            None => {
                eprintln!("psdae: could not lift the angle solution");
                return EXIT_SOLVE_FAILED;
            }
        },
        _ => table::SolutionTable::new(&traj, extract_duals(&sol, &nlp).ok().as_ref()),
    };
    let csv = cfg.out.join("solution.csv");
    if let Err(e) = table.write(&csv) {
        eprintln!("psdae: solution.csv: {e}");
        return EXIT_SOLVE_FAILED;
    }

    let code = if sol.is_success() && vv.passed() { EXIT_OK } else { EXIT_VV_FAILED };
    let mut report = header;
    report["status"] = json!(sol.status);
    report["iterations"] = json!(sol.iterations);
    report["objective"] = json!(sol.objective);
    report["infeasibility"] = json!(sol.infeasibility);
    report["stationarity"] = json!(sol.stationarity);
    report["vv"] = json!(vv);
    report["passed"] = json!(code == EXIT_OK);
    report["history"] = json!(sol.history);

    let mut figures = Vec::new();
    if cfg.plots {
        match emit_plots(&csv, &cfg.out.join("figures"), &cfg.pendulum) {
            Ok(files) => figures = files,
            Err(e) => {
                eprintln!("psdae: figures: {e}");
                return EXIT_SOLVE_FAILED;
            }
        }
    }
    report["figures"] = json!(figures.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy()).collect::<Vec<_>>());
    report["wall_clock_seconds"] = json!(started.elapsed().as_secs_f64());
    report["exit_code"] = json!(code);
    if let Err(e) = write_report(cfg, &report) {
        eprintln!("psdae: {e}");
        return EXIT_SOLVE_FAILED;
    }

    println!(
        "{}: {:?} after {} iterations, objective {:.10}",
        cfg.problem.name(),
        sol.status,
        sol.iterations,
        sol.objective
    );
    let failures = vv.failures();
    if failures.is_empty() {
        println!("verification passed ({} tests)", vv.tests.len());
    } else {
        println!("verification failed: {}", failures.join(", "));
    }
    code
}

/// The reduced problem's solution in Cartesian columns, via the oracle path
/// (same grid, same solver settings).
fn run_lifted(cfg: &RunConfig, grid: &Grid) -> Option<table::SolutionTable> {
    let o = run_oracle(&cfg.pendulum, grid, &cfg.solver).ok()?;
    Some(table::SolutionTable::new(&o.trajectory, None))
}
