use std::path::Path;
use std::process::Command;

use psdae_cli::table::SolutionTable;

fn psdae(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_psdae")).args(args).output().expect("binary runs");
    out.status.code().expect("exit code")
}

fn report(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lq_solve_reports_the_analytic_objective() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(psdae(&["solve", "--problem", "lq", "--nodes", "4", "--out", path(dir.path())]), 0);
    let r = report(dir.path());
    assert!((r["objective"].as_f64().unwrap() - 1.0).abs() <= 1e-8, "{}", r["objective"]);
    assert_eq!(r["passed"], true);
    assert_eq!(r["problem"], "lq");
    let table = SolutionTable::read(&dir.path().join("solution.csv")).unwrap();
    assert_eq!(table.rows.len(), 5);
    for l in table.column("lam1") {
        assert!((l + 2.0).abs() < 1e-5, "{l}");
    }
}

#[test]
fn too_few_nodes_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(psdae(&["solve", "--problem", "pendulum", "--nodes", "2", "--out", path(dir.path())]), 64);
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn bad_flags_and_config_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(psdae(&["solve", "--nodes", "many"]), 64);
    assert_eq!(psdae(&["frobnicate"]), 64);
    assert_eq!(psdae(&["--help"]), 0);
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "speed = 3\n").unwrap();
    assert_eq!(psdae(&["solve", "--config", path(&cfg)]), 64);
    assert_eq!(psdae(&["solve", "--config", path(&dir.path().join("absent.cfg"))]), 64);
    assert_eq!(psdae(&["solve", "--L", "-2", "--out", path(dir.path())]), 64);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# lq run\nproblem = lq\nnodes = 3\nT = 2\nb = 1\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(psdae(&["solve", "--config", path(&cfg), "--T", "4", "--out", path(&out)]), 0);
    let r = report(&out);
    assert_eq!(r["nodes"], 3);
    // b^2 / T with the flag's T.
    assert!((r["objective"].as_f64().unwrap() - 0.25).abs() < 1e-8);
}

#[test]
fn pendulum_run_writes_nine_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run1");
    let code = psdae(&["solve", "--problem", "pendulum", "--alpha", "0.0", "--nodes", "32", "--out", path(&out), "--plots"]);
    assert_eq!(code, 0);
    let names = [
        "phase.svg",
        "x1_target.svg",
        "x3_target.svg",
        "control.svg",
        "costates.svg",
        "nc_control.svg",
        "nc_singular.svg",
        "propagation.svg",
        "path_residual.svg",
    ];
    let figures = out.join("figures");
    assert_eq!(std::fs::read_dir(&figures).unwrap().count(), names.len());
    for name in names {
        let svg = std::fs::read_to_string(figures.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(doc.descendants().any(|n| n.has_tag_name("polyline")), "{name} has no curve");
    }
    let r = report(&out);
    assert_eq!(r["figures"].as_array().unwrap().len(), 9);
    assert_eq!(r["vv"]["tests"].as_array().unwrap().iter().filter(|t| t["pass"] == false).count(), 0);

    // The plot command alone reproduces the same files.
    let again = dir.path().join("again");
    assert_eq!(psdae(&["plot", "--csv", path(&out.join("solution.csv")), "--out", path(&again)]), 0);
    for name in names {
        assert_eq!(std::fs::read(figures.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(psdae(&["solve", "--nodes", "16", "--out", path(out)]), 0);
    }
    assert_eq!(std::fs::read(a.join("solution.csv")).unwrap(), std::fs::read(b.join("solution.csv")).unwrap());
}

#[test]
fn lq_plot_set_skips_pendulum_figures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(psdae(&["solve", "--problem", "lq", "--nodes", "6", "--plots", "--out", path(dir.path())]), 0);
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("figures"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["control.svg", "costates.svg", "propagation.svg"]);
}

#[test]
fn missing_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    std::fs::write(&csv, "t,x1,x2,x3,x4,x5,u,lam1,lam2,lam3,mu\n-1,0,0,0,0,0,0,0,0,0,0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_psdae"))
        .args(["plot", "--csv", path(&csv), "--out", path(&dir.path().join("f"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lam4"));

    // A table whose times are not a collocation grid is rejected too.
    std::fs::write(&csv, "t,x1,x2,x3,x4,x5,u,lam1,lam2,lam3,lam4,mu\n0,0,0,0,0,0,0,0,0,0,0,0\n0.3,0,0,0,0,0,0,0,0,0,0,0\n1,0,0,0,0,0,0,0,0,0,0,0\n").unwrap();
    assert_eq!(psdae(&["plot", "--csv", path(&csv), "--out", path(&dir.path().join("f"))]), 65);
}

#[test]
fn unconverged_run_exits_two_with_a_full_report() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(psdae(&["solve", "--nodes", "16", "--max-iter", "1", "--out", path(dir.path())]), 2);
    let r = report(dir.path());
    assert_eq!(r["status"], "max_iterations");
    assert_eq!(r["passed"], false);
    for key in ["objective", "infeasibility", "stationarity", "iterations", "wall_clock_seconds", "solver", "parameters"] {
        assert!(!r[key].is_null(), "{key}");
    }
    let tests = r["vv"]["tests"].as_array().unwrap();
    assert!(tests.iter().any(|t| t["name"] == "converged" && t["pass"] == false));
    assert!(dir.path().join("solution.csv").exists());
}

#[test]
fn reduced_formulation_writes_lifted_states() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(psdae(&["solve", "--problem", "reduced-pendulum", "--nodes", "16", "--out", path(dir.path())]), 0);
    let table = SolutionTable::read(&dir.path().join("solution.csv")).unwrap();
    for r in &table.rows {
        assert!((r[1] * r[1] + r[3] * r[3] - 4.0).abs() < 1e-9);
    }
    assert!(!table.has("lam1"));
}
