use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use psdae::ocp::{LinearQuadratic, PendulumParams};
use psdae::sqp::{HessianMode, SolverConfig};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Pendulum,
    Lq,
    ReducedPendulum,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Pendulum => "pendulum",
            ProblemKind::Lq => "lq",
            ProblemKind::ReducedPendulum => "reduced-pendulum",
        }
    }

    fn min_nodes(self) -> usize {
        match self {
            ProblemKind::Lq => 2,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub pendulum: PendulumParams,
    pub lq: LinearQuadratic,
    /// Polynomial order N; the grid has N+1 nodes.
    pub nodes: usize,
    pub solver: SolverConfig,
    pub out: PathBuf,
    pub plots: bool,
    pub verbose: bool,
    /// Recorded in the report; no algorithm draws random numbers.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Pendulum,
            pendulum: PendulumParams::default(),
            lq: LinearQuadratic::default(),
            nodes: 32,
            solver: SolverConfig::default(),
            out: PathBuf::from("run"),
            plots: false,
            verbose: false,
            seed: 0,
        }
    }
}

/// Keys accepted in a config file and, under the same names, as flags.
pub const KEYS: &[&str] = &[
    "problem",
    "a",
    "c",
    "d",
    "g",
    "L",
    "T",
    "alpha",
    "b",
    "nodes",
    "out",
    "plots",
    "verbose",
    "seed",
    "max_iter",
    "hessian",
    "tol_stationarity",
    "tol_feasibility",
];

/// Flat `key = value` text; `#` starts a comment line.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError(format!("line {}: expected key=value, got {line:?}", no + 1)));
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError(format!("line {}: unknown key {key:?}", no + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Build from merged settings. Every key is optional.
    pub fn from_settings(settings: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (key, value) in settings {
            let v = value.as_str();
            match key.as_str() {
                "problem" => {
                    cfg.problem = <ProblemKind as clap::ValueEnum>::from_str(v, false)
                        .map_err(|_| ConfigError(format!("problem: unknown {v:?}")))?
                }
                "a" => cfg.pendulum.a = number(key, v)?,
                "c" => cfg.pendulum.c = number(key, v)?,
                "d" => cfg.pendulum.d = number(key, v)?,
                "g" => cfg.pendulum.g = number(key, v)?,
                "L" => cfg.pendulum.length = number(key, v)?,
                "T" => {
                    let t = number(key, v)?;
                    cfg.pendulum.horizon = t;
                    cfg.lq.horizon = t;
                }
                "alpha" => cfg.pendulum.alpha = number(key, v)?,
                "b" => cfg.lq.target = number(key, v)?,
                "nodes" => cfg.nodes = number(key, v)?,
                "out" => cfg.out = PathBuf::from(v),
                "plots" => cfg.plots = boolean(key, v)?,
                "verbose" => cfg.verbose = boolean(key, v)?,
                "seed" => cfg.seed = number(key, v)?,
                "max_iter" => cfg.solver.max_iter = number(key, v)?,
                "hessian" => {
                    cfg.solver.hessian = match v {
                        "exact" => HessianMode::Exact,
                        "bfgs" => HessianMode::Bfgs,
                        _ => return Err(ConfigError(format!("hessian: expected exact or bfgs, got {v:?}"))),
                    }
                }
                "tol_stationarity" => cfg.solver.tol_stationarity = number(key, v)?,
                "tol_feasibility" => cfg.solver.tol_feasibility = number(key, v)?,
                other => return Err(ConfigError(format!("unknown key {other:?}"))),
            }
        }
        cfg.solver.verbose = cfg.verbose;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let min = self.problem.min_nodes();
        if self.nodes < min {
            return Err(ConfigError(format!("{} needs at least {min} nodes, got {}", self.problem.name(), self.nodes)));
        }
        match self.problem {
            ProblemKind::Lq => {
                if !(self.lq.horizon.is_finite() && self.lq.horizon > 0.0 && self.lq.target.is_finite()) {
                    return Err(ConfigError("lq needs a finite positive T and a finite b".into()));
                }
            }
            _ => self.pendulum.validate().map_err(|e| ConfigError(e.to_string()))?,
        }
        self.solver.validate().map_err(ConfigError)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_and_comments() {
        let m = parse_config_text("# run\nproblem = lq\n\nT=3\nb = 2\nnodes=6\n").unwrap();
        let cfg = RunConfig::from_settings(&m).unwrap();
        assert_eq!(cfg.problem, ProblemKind::Lq);
        assert_eq!(cfg.lq, LinearQuadratic { horizon: 3.0, target: 2.0 });
        assert_eq!(cfg.nodes, 6);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_lines_are_rejected() {
        assert!(parse_config_text("nodes 5").is_err());
        assert!(parse_config_text("bogus = 1").is_err());
        let m = parse_config_text("nodes = many").unwrap();
        assert!(RunConfig::from_settings(&m).is_err());
        let m = parse_config_text("hessian = newton").unwrap();
        assert!(RunConfig::from_settings(&m).is_err());
    }

    #[test]
    fn minimum_nodes() {
        let cfg = RunConfig { nodes: 2, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { nodes: 2, problem: ProblemKind::Lq, ..Default::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn pendulum_parameters_are_checked() {
        let mut cfg = RunConfig::default();
        cfg.pendulum.length = -1.0;
        assert!(cfg.validate().is_err());
    }
}
