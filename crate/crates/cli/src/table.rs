use std::path::Path;

use psdae::covector::DualTrajectory;
use psdae::transcribe::Trajectory;
use thiserror::Error;

/// Fixed column order of `solution.csv`. Channels a problem does not have are
/// written as `NaN`.
pub const COLUMNS: [&str; 12] = ["t", "x1", "x2", "x3", "x4", "x5", "u", "lam1", "lam2", "lam3", "lam4", "mu"];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}, column {column}: cannot parse {value:?}")]
    Parse { row: usize, column: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTable {
    pub rows: Vec<[f64; 12]>,
}

fn col(name: &str) -> usize {
    COLUMNS.iter().position(|c| *c == name).expect("known column")
}

impl SolutionTable {
    /// States fill `x1..`, the algebraic channel `x5`, costates `lam1..`.
    pub fn new(traj: &Trajectory, duals: Option<&DualTrajectory>) -> Self {
        let rows = (0..traj.times.len())
            .map(|j| {
                let mut r = [f64::NAN; 12];
                r[0] = traj.times[j];
                for i in 0..traj.states.ncols().min(4) {
                    r[1 + i] = traj.states[(j, i)];
                }
                if traj.algebraic.ncols() > 0 {
                    r[5] = traj.algebraic[(j, 0)];
                }
                if traj.controls.ncols() > 0 {
                    r[6] = traj.controls[(j, 0)];
                }
                if let Some(d) = duals {
                    for i in 0..d.costates.ncols().min(4) {
                        r[7 + i] = d.costates[(j, i)];
                    }
                    if d.path_covectors.ncols() > 0 {
                        r[11] = d.path_covectors[(j, 0)];
                    }
                }
                r
            })
            .collect();
        Self { rows }
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        let c = col(name);
        self.rows.iter().map(|r| r[c]).collect()
    }

    /// True when every entry of the column is finite.
    pub fn has(&self, name: &str) -> bool {
        let c = col(name);
        !self.rows.is_empty() && self.rows.iter().all(|r| r[c].is_finite())
    }

    /// Full precision: 17 significant digits.
    pub fn write(&self, path: &Path) -> Result<(), TableError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TableError> {
        let mut rd = csv::Reader::from_path(path)?;
        let headers = rd.headers()?.clone();
        let mut index = [0usize; 12];
        for (k, name) in COLUMNS.iter().enumerate() {
            index[k] = headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| TableError::MissingColumn(name.to_string()))?;
        }
        let mut rows = Vec::new();
        for (no, rec) in rd.records().enumerate() {
            let rec = rec?;
            let mut r = [0.0; 12];
            for (k, &i) in index.iter().enumerate() {
                let raw = rec.get(i).unwrap_or("").trim();
                r[k] = raw.parse().map_err(|_| TableError::Parse {
                    row: no + 1,
                    column: COLUMNS[k].to_string(),
                    value: raw.to_string(),
                })?;
            }
            rows.push(r);
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn round_trip_is_lossless() {
        let traj = Trajectory {
            times: vec![0.0, 0.1 + 0.2, 1.0 / 3.0],
            states: DMatrix::from_fn(3, 1, |j, _| (j as f64).exp() * 1e-7),
            algebraic: DMatrix::zeros(3, 0),
            controls: DMatrix::from_fn(3, 1, |j, _| -(j as f64 + 0.1).ln()),
        };
        let table = SolutionTable::new(&traj, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        table.write(&path).unwrap();
        let back = SolutionTable::read(&path).unwrap();
        assert_eq!(back.column("t"), table.column("t"));
        assert_eq!(back.column("x1"), table.column("x1"));
        assert_eq!(back.column("u"), table.column("u"));
        assert!(back.column("x2").iter().all(|v| v.is_nan()));
        assert!(back.has("x1") && !back.has("lam1"));
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "t,x1,x2,x3,x4,x5,u,lam1,lam2,lam3,lam4\n0,0,0,0,0,0,0,0,0,0,0\n").unwrap();
        match SolutionTable::read(&path) {
            Err(TableError::MissingColumn(c)) => assert_eq!(c, "mu"),
            other => panic!("{other:?}"),
        }
    }
}
