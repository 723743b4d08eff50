use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use psdae::basis::Grid;
use psdae::integrate::ControlSignal;
use psdae::ocp::{LinearQuadratic, OcpProblem, Pendulum, PendulumParams};
use psdae::transcribe::Trajectory;
use psdae::vv::{verify_feasibility, Thresholds};
use thiserror::Error;

use crate::svg::{Chart, Series, Style};
use crate::table::{SolutionTable, TableError};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("schema: {0}")]
    Schema(#[from] TableError),
    #[error("schema: {0}")]
    Layout(String),
    #[error("parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PlotError {
    pub fn is_schema(&self) -> bool {
        matches!(self, PlotError::Schema(_) | PlotError::Layout(_))
    }
}

const DENSE: usize = 200;

/// Which problem family the table came from, judged by its finite columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Pendulum,
    /// One state, `x' = u`.
    Scalar,
}

fn shape(table: &SolutionTable) -> Result<Shape, PlotError> {
    let base = table.has("t") && table.has("x1") && table.has("u");
    if base && ["x2", "x3", "x4", "x5"].iter().all(|c| table.has(c)) {
        Ok(Shape::Pendulum)
    } else if base {
        Ok(Shape::Scalar)
    } else {
        Err(PlotError::Layout("t, x1 and u must be finite".into()))
    }
}

fn trajectory(table: &SolutionTable, shape: Shape) -> Trajectory {
    let n = table.rows.len();
    let states: Vec<&str> = match shape {
        Shape::Pendulum => vec!["x1", "x2", "x3", "x4"],
        Shape::Scalar => vec!["x1"],
    };
    let cols: Vec<Vec<f64>> = states.iter().map(|c| table.column(c)).collect();
    let x5 = table.column("x5");
    let u = table.column("u");
    Trajectory {
        times: table.column("t"),
        states: DMatrix::from_fn(n, cols.len(), |j, i| cols[i][j]),
        algebraic: match shape {
            Shape::Pendulum => DMatrix::from_fn(n, 1, |j, _| x5[j]),
            Shape::Scalar => DMatrix::zeros(n, 0),
        },
        controls: DMatrix::from_fn(n, 1, |j, _| u[j]),
    }
}

fn write(out: &Path, name: &str, chart: Chart, written: &mut Vec<PathBuf>) -> Result<(), PlotError> {
    let path = out.join(name);
    std::fs::write(&path, chart.render())?;
    written.push(path);
    Ok(())
}

fn chart(title: &str, x: &str, y: &str, series: Vec<Series>) -> Chart {
    Chart { title: title.into(), x_label: x.into(), y_label: y.into(), series, equal_aspect: false }
}

/// Render the figure set for a `solution.csv`. The time column must be an
/// LGL grid; the horizon is taken from its last entry and overrides the one
/// in `params`. Returns the files written.
pub fn emit_plots(csv: &Path, out: &Path, params: &PendulumParams) -> Result<Vec<PathBuf>, PlotError> {
    let table = SolutionTable::read(csv)?;
    if table.rows.len() < 3 {
        return Err(PlotError::Layout(format!("need at least 3 rows, got {}", table.rows.len())));
    }
    let shape = shape(&table)?;
    let n = table.rows.len() - 1;
    let t = table.column("t");
    let horizon = t[n];
    let grid = Grid::new(n).map_err(|e| PlotError::Layout(e.to_string()))?;
    if grid.times(horizon).iter().zip(&t).any(|(a, b)| (a - b).abs() > 1e-9 * horizon.abs().max(1.0)) {
        return Err(PlotError::Layout("t column is not an LGL grid".into()));
    }
    let p = PendulumParams { horizon, ..*params };
    let traj = trajectory(&table, shape);
    let problem: Box<dyn OcpProblem> = match shape {
        Shape::Pendulum => Box::new(Pendulum::new(p).map_err(|e| PlotError::Params(e.to_string()))?),
        Shape::Scalar => Box::new(LinearQuadratic { horizon, target: traj.states[(n, 0)] }),
    };
    let thresholds = Thresholds { dense_samples: DENSE, ..Default::default() };
    let feas = verify_feasibility(&traj, problem.as_ref(), &grid, &thresholds);
    let signal = ControlSignal::new(&traj, &grid, horizon);
    let dense_t: Vec<f64> = (0..DENSE).map(|i| horizon * i as f64 / (DENSE - 1) as f64).collect();
    let dense_u: Vec<f64> = dense_t.iter().map(|&s| signal.at(s).map(|(u, _)| u[0]).unwrap_or(f64::NAN)).collect();

    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let col = |c: &str| table.column(c);

    if shape == Shape::Pendulum {
        let (tx1, tx3): (Vec<f64>, Vec<f64>) = dense_t.iter().map(|&s| p.target(s)).unzip();
        let prop1: Vec<f64> = feas.dense_states.iter().map(|x| x[0]).collect();
        let prop3: Vec<f64> = feas.dense_states.iter().map(|x| x[2]).collect();
        let mut phase = chart(
            "Optimal trajectory in the x1-x3 plane",
            "x1",
            "x3",
            vec![
                Series::new("nodes", col("x1"), col("x3"), Style::Markers),
                Series::new("propagated", prop1.clone(), prop3.clone(), Style::Line),
                Series::new("target", tx1.clone(), tx3.clone(), Style::Dashed),
            ],
        );
        phase.equal_aspect = true;
        write(out, "phase.svg", phase, &mut written)?;
        let target = |label: &str, nodes: Vec<f64>, prop: Vec<f64>, tgt: Vec<f64>| {
            chart(
                &format!("{label} and its target"),
                "t",
                label,
                vec![
                    Series::new(&format!("{label} nodes"), t.clone(), nodes, Style::Markers),
                    Series::new(&format!("{label} propagated"), dense_t.clone(), prop, Style::Line),
                    Series::new(&format!("{label} target"), dense_t.clone(), tgt, Style::Dashed),
                ],
            )
        };
        write(out, "x1_target.svg", target("x1", col("x1"), prop1, tx1), &mut written)?;
        write(out, "x3_target.svg", target("x3", col("x3"), prop3, tx3), &mut written)?;
    }

    write(
        out,
        "control.svg",
        chart(
            "Control",
            "t",
            "u",
            vec![
                Series::new("u nodes", t.clone(), col("u"), Style::Markers),
                Series::new("u interpolated", dense_t.clone(), dense_u, Style::Line),
            ],
        ),
        &mut written,
    )?;

    let lam_cols: Vec<&str> = ["lam1", "lam2", "lam3", "lam4"].into_iter().filter(|c| table.has(c)).collect();
    if !lam_cols.is_empty() {
        let series = lam_cols.iter().map(|c| Series::new(c, t.clone(), col(c), Style::Line)).collect();
        write(out, "costates.svg", chart("Costates", "t", "lambda", series), &mut written)?;
    }

    if shape == Shape::Pendulum && table.has("lam2") && table.has("lam4") {
        let (x1, x3, l2, l4) = (col("x1"), col("x3"), col("lam2"), col("lam4"));
        let implied: Vec<f64> = (0..=n).map(|j| (l4[j] * x1[j] - l2[j] * x3[j]) / (2.0 * p.c)).collect();
        write(
            out,
            "nc_control.svg",
            chart(
                "Control stationarity",
                "t",
                "u",
                vec![
                    Series::new("u", t.clone(), col("u"), Style::Line),
                    Series::new("(l4 x1 - l2 x3) / 2c", t.clone(), implied, Style::Markers),
                ],
            ),
            &mut written,
        )?;
        let lhs: Vec<f64> = (0..=n).map(|j| l2[j] * x1[j]).collect();
        let rhs: Vec<f64> = (0..=n).map(|j| -l4[j] * x3[j]).collect();
        write(
            out,
            "nc_singular.svg",
            chart(
                "Singular-arc condition",
                "t",
                "",
                vec![
                    Series::new("l2 x1", t.clone(), lhs, Style::Line),
                    Series::new("-l4 x3", t.clone(), rhs, Style::Markers),
                ],
            ),
            &mut written,
        )?;
    }

    let nx = traj.states.ncols();
    let mut series = Vec::new();
    for i in 0..nx {
        let name = format!("x{}", i + 1);
        let prop: Vec<f64> = feas.dense_states.iter().map(|x| x[i]).collect();
        series.push(Series::new(&format!("{name} propagated"), feas.dense_times.clone(), prop, Style::Line));
        series.push(Series::new(&format!("{name} nodes"), t.clone(), col(&name), Style::Markers));
    }
    let title = format!("Propagated vs. collocated states (max deviation {:.2e})", feas.max_state_deviation);
    write(out, "propagation.svg", chart(&title, "t", "state", series), &mut written)?;

    if shape == Shape::Pendulum {
        let residual: Vec<f64> = feas.dense_states.iter().map(|x| x[0] * x[0] + x[2] * x[2] - p.length * p.length).collect();
        write(
            out,
            "path_residual.svg",
            chart(
                "Path constraint along the propagated trajectory",
                "t",
                "x1^2 + x3^2 - L^2",
                vec![Series::new("residual", feas.dense_times.clone(), residual, Style::Line)],
            ),
            &mut written,
        )?;
    }
    Ok(written)
}
