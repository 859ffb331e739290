//! Per-probe-step metric records and their CSV form.
//!
//! The file starts with a version line naming the scalarization and the
//! velocity gap, then a fixed column header, then one row per record. Floats
//! are written with 17 significant digits so that reading restores them
//! exactly; absent values are empty fields.

use std::fs;
use std::path::Path;

use crate::error::{NtkError, Result};
use crate::ntk::Scalarization;

pub const CSV_VERSION: &str = "ntk-lab-metrics v1";

pub const COLUMNS: [&str; 10] = [
    "global_step",
    "task_index",
    "iteration",
    "lambda_max",
    "kernel_distance_from_init",
    "kernel_distance_from_prev",
    "velocity",
    "alignment",
    "train_loss",
    "task1_test_accuracy",
];

/// Metrics at one probe step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    /// Probe-step index.
    pub global_step: usize,
    /// Task of the last training iteration before the probe (0 at the start).
    pub task_index: usize,
    /// Training iterations completed.
    pub iteration: usize,
    pub lambda_max: f64,
    pub kernel_distance_from_init: f64,
    pub kernel_distance_from_prev: Option<f64>,
    /// `None` until `velocity_dt` probe steps have elapsed.
    pub velocity: Option<f64>,
    pub alignment: f64,
    /// Mean training loss since the previous probe step.
    pub train_loss: Option<f64>,
    pub task1_test_accuracy: f64,
}

impl MetricRecord {
    /// Record emitted when training diverges.
    pub fn poisoned(global_step: usize, task_index: usize, iteration: usize) -> Self {
        MetricRecord {
            global_step,
            task_index,
            iteration,
            lambda_max: f64::NAN,
            kernel_distance_from_init: f64::NAN,
            kernel_distance_from_prev: None,
            velocity: None,
            alignment: f64::NAN,
            train_loss: Some(f64::NAN),
            task1_test_accuracy: f64::NAN,
        }
    }

    pub fn is_poisoned(&self) -> bool {
        self.lambda_max.is_nan()
    }

    /// Value of a column by name; `None` for unknown names and absent values.
    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "global_step" => Some(self.global_step as f64),
            "task_index" => Some(self.task_index as f64),
            "iteration" => Some(self.iteration as f64),
            "lambda_max" => Some(self.lambda_max),
            "kernel_distance_from_init" => Some(self.kernel_distance_from_init),
            "kernel_distance_from_prev" => self.kernel_distance_from_prev,
            "velocity" => self.velocity,
            "alignment" => Some(self.alignment),
            "train_loss" => self.train_loss,
            "task1_test_accuracy" => Some(self.task1_test_accuracy),
            _ => None,
        }
    }
}

/// Records plus the header context they were measured under.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricLog {
    pub scalarization: Scalarization,
    pub probe_every: usize,
    pub velocity_dt: usize,
    pub records: Vec<MetricRecord>,
}

impl MetricLog {
    /// Record indices `b` where the task changes between `b` and `b + 1`.
    pub fn boundaries(&self) -> Vec<usize> {
        task_boundaries(&self.records)
    }
}

pub fn task_boundaries(records: &[MetricRecord]) -> Vec<usize> {
    records
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].task_index != w[1].task_index)
        .map(|(i, _)| i)
        .collect()
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

fn version_line(log: &MetricLog) -> String {
    format!(
        "# {CSV_VERSION}; scalarization={}; probe_every={}; velocity_dt={}",
        log.scalarization, log.probe_every, log.velocity_dt
    )
}

pub fn metrics_to_string(log: &MetricLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| NtkError::Data(format!("csv: {e}"));
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in &log.records {
        w.write_record([
            r.global_step.to_string(),
            r.task_index.to_string(),
            r.iteration.to_string(),
            float(r.lambda_max),
            float(r.kernel_distance_from_init),
            opt(r.kernel_distance_from_prev),
            opt(r.velocity),
            float(r.alignment),
            opt(r.train_loss),
            float(r.task1_test_accuracy),
        ])
        .map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| NtkError::Data(format!("csv: {e}")))?;
    let mut out = version_line(log);
    out.push('\n');
    out.push_str(&String::from_utf8(body).expect("csv output is ascii"));
    Ok(out)
}

pub fn write_metrics_csv(log: &MetricLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_to_string(log)?).map_err(|e| NtkError::io(path, e))
}

fn header_field<'a>(fields: &[(&'a str, &'a str)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| NtkError::Version(format!("version line lacks {key}")))
}

pub fn metrics_from_str(text: &str) -> Result<MetricLog> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let first = first.trim_end_matches('\r');
    let mut parts = first.strip_prefix("# ").unwrap_or("").split("; ");
    if parts.next() != Some(CSV_VERSION) {
        return Err(NtkError::Version(format!("expected `# {CSV_VERSION}` first line, got {first:?}")));
    }
    let fields: Vec<(&str, &str)> = parts.filter_map(|p| p.split_once('=')).collect();
    let scalarization: Scalarization = header_field(&fields, "scalarization")?
        .parse()
        .map_err(|_| NtkError::Version("unknown scalarization in version line".into()))?;
    let int = |key: &str| -> Result<usize> {
        header_field(&fields, key)?
            .parse()
            .map_err(|_| NtkError::Version(format!("bad {key} in version line")))
    };
    let probe_every = int("probe_every")?;
    let velocity_dt = int("velocity_dt")?;

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| NtkError::Version(format!("unreadable column header: {e}")))?
        .clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(NtkError::Version(format!(
            "column header {:?} does not match {CSV_VERSION}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| NtkError::Data(format!("csv row {}: {e}", row + 1)))?;
        let bad = |col: &str| NtkError::Data(format!("csv row {}: bad {col}", row + 1));
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(COLUMNS[i]));
        let real = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(COLUMNS[i]));
        let maybe = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                real(i).map(Some)
            }
        };
        records.push(MetricRecord {
            global_step: int(0)?,
            task_index: int(1)?,
            iteration: int(2)?,
            lambda_max: real(3)?,
            kernel_distance_from_init: real(4)?,
            kernel_distance_from_prev: maybe(5)?,
            velocity: maybe(6)?,
            alignment: real(7)?,
            train_loss: maybe(8)?,
            task1_test_accuracy: real(9)?,
        });
    }
    Ok(MetricLog {
        scalarization,
        probe_every,
        velocity_dt,
        records,
    })
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<MetricLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| NtkError::io(path, e))?;
    metrics_from_str(&text)
}
