//! Line-delimited JSON metric records and CSV plot tables.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

/// Schema version stamped on every record.
pub const METRICS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub schema: u32,
    pub experiment: String,
    /// Epoch, sweep or other step counter; 0 when not applicable.
    pub step: u64,
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<u32>,
}

impl MetricRecord {
    pub fn new(experiment: &str, step: u64, metric: &str, value: f64, cluster: Option<u32>) -> Self {
        Self {
            schema: METRICS_SCHEMA,
            experiment: experiment.to_string(),
            step,
            metric: metric.to_string(),
            value,
            cluster,
        }
    }
}

/// Appends one record per line.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        if !rec.value.is_finite() {
            return Err(HarnessError::Metrics(format!(
                "{} = {} is not finite",
                rec.metric, rec.value
            )));
        }
        let line = serde_json::to_string(rec).map_err(|e| HarnessError::Metrics(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| HarnessError::Metrics(e.to_string()))
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| HarnessError::Metrics(e.to_string()))?;
        Ok(self.out)
    }
}

/// Opens `path` for appending, creating it if needed.
pub fn append_metrics(path: &Path) -> Result<MetricsWriter<BufWriter<File>>> {
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    Ok(MetricsWriter::new(BufWriter::new(f)))
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: MetricRecord = serde_json::from_str(l)
                .map_err(|e| HarnessError::Metrics(format!("line {}: {e}", i + 1)))?;
            if rec.schema != METRICS_SCHEMA {
                return Err(HarnessError::Metrics(format!(
                    "line {}: schema {} (expected {METRICS_SCHEMA})",
                    i + 1,
                    rec.schema
                )));
            }
            Ok(rec)
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line.map_err(io_err(path))?);
        text.push('\n');
    }
    parse_metrics(&text)
}

/// A numeric table destined for a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| HarnessError::Metrics(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(err)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Metrics(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
