//! CSV result rows.
//!
//! One row per `(instance, algorithm, horizon)` cell; floating point fields
//! are written with 17 significant digits so files are exact and diffable.

use std::cmp::Ordering;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::CellResult;

pub const HEADER: [&str; 11] = [
    "instance_mu0",
    "instance_mu1",
    "algorithm",
    "horizon",
    "replications",
    "normalized_mse",
    "normalized_mse_se",
    "mean_regret",
    "mean_regret_se",
    "median_exploration_time",
    "cs_violation_rate",
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ResultRow {
    pub instance_mu0: f64,
    pub instance_mu1: f64,
    pub algorithm: String,
    pub horizon: u64,
    pub replications: u64,
    pub normalized_mse: f64,
    pub normalized_mse_se: f64,
    pub mean_regret: f64,
    pub mean_regret_se: f64,
    /// `inf` when the median replication never left `1/2`.
    pub median_exploration_time: f64,
    pub cs_violation_rate: f64,
}

impl ResultRow {
    fn fields(&self) -> [String; 11] {
        [
            fmt_f64(self.instance_mu0),
            fmt_f64(self.instance_mu1),
            self.algorithm.clone(),
            self.horizon.to_string(),
            self.replications.to_string(),
            fmt_f64(self.normalized_mse),
            fmt_f64(self.normalized_mse_se),
            fmt_f64(self.mean_regret),
            fmt_f64(self.mean_regret_se),
            fmt_f64(self.median_exploration_time),
            fmt_f64(self.cs_violation_rate),
        ]
    }

    fn order(&self, other: &Self) -> Ordering {
        self.instance_mu0
            .total_cmp(&other.instance_mu0)
            .then(self.instance_mu1.total_cmp(&other.instance_mu1))
            .then_with(|| self.algorithm.cmp(&other.algorithm))
            .then(self.horizon.cmp(&other.horizon))
    }
}

/// Scientific notation with 17 significant digits; `inf`/`NaN` spelled as Rust parses them.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Rows for the successful cells, in canonical order.
pub fn rows_from_cells(cells: &[CellResult]) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = cells
        .iter()
        .filter_map(|c| {
            let m = c.outcome.as_ref().ok()?;
            Some(ResultRow {
                instance_mu0: c.key.mu0,
                instance_mu1: c.key.mu1,
                algorithm: c.key.algorithm.name().to_owned(),
                horizon: c.key.horizon,
                replications: m.replications,
                normalized_mse: m.normalized_mse,
                normalized_mse_se: m.normalized_mse_se,
                mean_regret: m.mean_regret,
                mean_regret_se: m.mean_regret_se,
                median_exploration_time: m.median_exploration_time.unwrap_or(f64::INFINITY),
                cs_violation_rate: m.cs_violation_rate,
            })
        })
        .collect();
    sort_rows(&mut rows);
    rows
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(ResultRow::order);
}

/// Renders rows (sorted into canonical order) as CSV text.
pub fn to_csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |source| Error::Csv {
        path: "<memory>".into(),
        source,
    };
    w.write_record(HEADER).map_err(csv_err)?;
    for r in &sorted {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

pub fn write_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::domain("refusing to write an empty result file"));
    }
    let text = to_csv_string(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_owned(),
        source,
    })?;
    let headers = reader.headers().map_err(|source| Error::Csv {
        path: path.to_owned(),
        source,
    })?;
    if headers.iter().ne(HEADER) {
        return Err(Error::domain(format!("{} does not have the expected header", path.display())));
    }
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(|source| Error::Csv {
            path: path.to_owned(),
            source,
        })
}
