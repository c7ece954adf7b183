use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConvergedChangeTol,
    ConvergedObjectiveWindow,
    MaxIterations,
    SolverFailure,
}

impl Termination {
    pub fn is_converged(self) -> bool {
        matches!(self, Termination::ConvergedChangeTol | Termination::ConvergedObjectiveWindow)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ConvergedChangeTol => "converged_change_tol",
            Termination::ConvergedObjectiveWindow => "converged_objective_window",
            Termination::MaxIterations => "max_iterations",
            Termination::SolverFailure => "solver_failure",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub change: f64,
    pub beta: f64,
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationHistory {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Debug, thiserror::Error)]
pub enum HistoryCsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

impl OptimizationHistory {
    pub fn n_constraints(&self) -> usize {
        self.records.first().map_or(0, |r| r.constraints.len())
    }

    pub fn header(n_constraints: usize) -> Vec<String> {
        let mut h = vec!["iteration".to_string(), "objective".to_string()];
        h.extend((0..n_constraints).map(|i| format!("constraint_{i}")));
        h.extend(["change", "beta", "ms"].map(String::from));
        h
    }

    /// CSV with columns `iteration, objective, constraint_0..k, change, beta, ms`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header(self.n_constraints())).expect("in-memory write");
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), format!("{:e}", r.objective)];
            row.extend(r.constraints.iter().map(|c| format!("{c:e}")));
            row.push(format!("{:e}", r.change));
            row.push(r.beta.to_string());
            row.push(r.ms.to_string());
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Parses records written by [`to_csv`](Self::to_csv); termination is not
    /// part of the file and must be supplied.
    pub fn from_csv(text: &str, termination: Termination) -> Result<Self, HistoryCsvError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers()?.clone();
        let n = headers.len();
        if n < 5 {
            return Err(HistoryCsvError::Header(format!("{n} columns")));
        }
        let expected = Self::header(n - 5);
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(HistoryCsvError::Header(headers.iter().collect::<Vec<_>>().join(",")));
        }
        let mut records = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64, HistoryCsvError> {
                rec[i].parse().map_err(|e| HistoryCsvError::Row { row, message: format!("column {i}: {e}") })
            };
            records.push(IterationRecord {
                iteration: num(0)? as usize,
                objective: num(1)?,
                constraints: (2..n - 3).map(num).collect::<Result<_, _>>()?,
                change: num(n - 3)?,
                beta: num(n - 2)?,
                ms: num(n - 1)? as u64,
            });
        }
        Ok(Self { records, termination })
    }
}
