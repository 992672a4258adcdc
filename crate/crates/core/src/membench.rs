//! STREAM COPY bandwidth probe.
//!
//! Each worker first-touches and then copies its own static block of the
//! source array. Every pass moves one read and one write of 8 bytes per
//! element; the fastest of `runs` passes is reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{best_run, BestOf, MetricUnit, RunRecord};
use crate::tasking::{Clock, Executor, Stopwatch, TaskError};

/// Array length used for the reference measurements (128 million doubles).
pub const REFERENCE_ELEMENTS: usize = 128_000_000;

const SPOT_CHECKS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub elements: usize,
    pub runs: usize,
    /// Worker counts to sweep.
    pub workers: Vec<usize>,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            elements: REFERENCE_ELEMENTS,
            runs: 10,
            workers: vec![1],
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.workers.is_empty() {
            return Err(Error::config("worker sweep is empty"));
        }
        if let Some(&w) = self.workers.iter().find(|&&w| w == 0 || w > self.elements) {
            return Err(Error::config(format!(
                "{w} workers for {} elements; need 1 <= workers <= elements",
                self.elements
            )));
        }
        Ok(())
    }
}

/// Best bandwidth at one worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPoint {
    pub workers: usize,
    pub elements: usize,
    /// Bytes read plus bytes written by one pass.
    pub bytes_moved: f64,
    pub all_seconds: Vec<f64>,
    pub best_seconds: f64,
    pub gbps: f64,
    /// Sum of the destination array after the last pass.
    pub checksum: f64,
}

/// Bytes one copy pass moves: one 8-byte read and one 8-byte write per element.
pub fn copy_bytes(elements: usize) -> f64 {
    2.0 * elements as f64 * 8.0
}

impl BandwidthPoint {
    pub fn from_runs(workers: usize, elements: usize, all_seconds: Vec<f64>) -> Result<Self> {
        let best = best_run(&all_seconds).ok_or_else(|| Error::config("no timed runs"))?;
        let best_seconds = all_seconds[best];
        let bytes_moved = copy_bytes(elements);
        Ok(Self {
            workers,
            elements,
            bytes_moved,
            all_seconds,
            best_seconds,
            gbps: bytes_moved / best_seconds / 1e9,
            checksum: 0.0,
        })
    }

    /// Megabytes per second, the unit of the `.dat` output.
    pub fn mbps(&self) -> f64 {
        self.bytes_moved / self.best_seconds / 1e6
    }

    pub fn to_record(&self, cfg: &StreamConfig) -> Result<RunRecord> {
        Ok(RunRecord::from_runs(
            "stream",
            serde_json::to_value(cfg)?,
            BestOf::MaxThroughput,
            self.bytes_moved,
            MetricUnit::GbPerSecond,
            self.all_seconds.clone(),
        )?
        .with_placement(self.workers, 1)
        .with_checksum(self.checksum))
    }
}

fn source_value(i: usize) -> f64 {
    1.0 + (i % 1024) as f64
}

fn alloc_error(e: TaskError, elements: usize) -> Error {
    match e {
        TaskError::Allocation { .. } => Error::config(format!(
            "cannot allocate two arrays of {elements} doubles; retry with a smaller --elements"
        )),
        other => other.into(),
    }
}

/// Measures one worker count.
pub fn stream_copy_point(elements: usize, runs: usize, exec: &Executor, clock: &dyn Clock, seed: u64) -> Result<BandwidthPoint> {
    let src: Vec<f64> = exec
        .first_touch_init(elements, 1, 0..elements, |_, i| source_value(i))
        .map_err(|e| alloc_error(e, elements))?;
    let mut dst: Vec<f64> = exec
        .first_touch_init(elements, 1, 0..elements, |_, _| 0.0)
        .map_err(|e| alloc_error(e, elements))?;
    let mut seconds = Vec::with_capacity(runs);
    for _ in 0..runs {
        let watch = Stopwatch::start(clock);
        exec.for_each_block_mut(&mut dst, |range, out| {
            out.copy_from_slice(&src[range]);
        })?;
        std::hint::black_box(&mut dst);
        seconds.push(watch.elapsed());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SPOT_CHECKS.min(elements) {
        let i = rng.gen_range(0..elements);
        if dst[i].to_bits() != src[i].to_bits() {
            return Err(Error::Verification(format!(
                "copy mismatch at {i}: {} != {}",
                dst[i], src[i]
            )));
        }
    }
    let mut point = BandwidthPoint::from_runs(exec.workers(), elements, seconds)?;
    point.checksum = dst.iter().sum();
    Ok(point)
}

/// One bandwidth point per worker count in the sweep.
pub fn stream_copy(cfg: &StreamConfig, clock: &dyn Clock) -> Result<Vec<BandwidthPoint>> {
    cfg.validate()?;
    cfg.workers
        .iter()
        .map(|&w| {
            let exec = Executor::with_workers(w)?;
            stream_copy_point(cfg.elements, cfg.runs, &exec, clock, cfg.seed)
        })
        .collect()
}
