//! Benchmark measurements and their gnuplot/JSON-lines serialization.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of several timed runs is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestOf {
    /// Shortest wall time.
    MinTime,
    /// Highest throughput, i.e. also the shortest wall time for a fixed
    /// amount of work.
    MaxThroughput,
}

/// Unit of the derived metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricUnit {
    #[serde(rename = "GLUP/s")]
    GlupPerSecond,
    #[serde(rename = "GB/s")]
    GbPerSecond,
    #[serde(rename = "s")]
    Seconds,
}

/// One benchmark measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub benchmark: String,
    /// Snapshot of the configuration that produced the record.
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub workers: usize,
    pub localities: usize,
    /// Index of the selected run among `all_seconds`.
    pub run_index: usize,
    pub best_of: BestOf,
    pub all_seconds: Vec<f64>,
    pub wall_seconds: f64,
    /// Lattice updates or bytes moved by one run.
    pub work: f64,
    pub metric: f64,
    pub metric_unit: MetricUnit,
    pub checksum: Option<f64>,
}

impl RunRecord {
    /// Builds a record from the timings of repeated runs of the same work.
    pub fn from_runs(
        benchmark: &str,
        config: serde_json::Value,
        best_of: BestOf,
        work: f64,
        metric_unit: MetricUnit,
        all_seconds: Vec<f64>,
    ) -> Result<Self> {
        let run_index = best_run(&all_seconds)
            .ok_or_else(|| Error::config(format!("{benchmark}: no timed runs")))?;
        let wall_seconds = all_seconds[run_index];
        Ok(Self {
            benchmark: benchmark.to_string(),
            config,
            timestamp: now_unix(),
            workers: 1,
            localities: 1,
            run_index,
            best_of,
            wall_seconds,
            work,
            metric: derive_metric(metric_unit, work, wall_seconds),
            metric_unit,
            all_seconds,
            checksum: None,
        })
    }

    pub fn with_placement(mut self, workers: usize, localities: usize) -> Self {
        self.workers = workers;
        self.localities = localities;
        self
    }

    pub fn with_checksum(mut self, checksum: f64) -> Self {
        self.checksum = Some(checksum);
        self
    }

    /// Metric recomputed from the stored work and wall time.
    pub fn recompute_metric(&self) -> f64 {
        derive_metric(self.metric_unit, self.work, self.wall_seconds)
    }
}

fn derive_metric(unit: MetricUnit, work: f64, seconds: f64) -> f64 {
    match unit {
        MetricUnit::GlupPerSecond | MetricUnit::GbPerSecond => work / seconds / 1e9,
        MetricUnit::Seconds => seconds,
    }
}

/// Index of the shortest positive timing. Both best-of policies pick the
/// fastest run because every run performs the same work.
pub fn best_run(seconds: &[f64]) -> Option<usize> {
    seconds
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Appends records to a JSON-lines file, creating it if needed.
pub fn append_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Renders `<x> <y>` lines, one per point.
pub fn dat_lines<X: std::fmt::Display, Y: std::fmt::Display>(points: &[(X, Y)]) -> String {
    let mut out = String::new();
    for (x, y) in points {
        out.push_str(&format!("{x} {y}\n"));
    }
    out
}

/// Parses `<x> <y>` lines; blank lines and `#` comments are skipped.
pub fn parse_dat(text: &str) -> Result<Vec<(f64, f64)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace();
            let mut num = || -> Result<f64> {
                it.next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::config(format!("bad .dat line `{l}`")))
            };
            Ok((num()?, num()?))
        })
        .collect()
}

pub fn write_dat(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
