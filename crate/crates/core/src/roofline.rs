//! Roofline model for memory-bound stencils.
//!
//! Attainable throughput is `min(CP, AI * BW)` with AI in lattice updates
//! per byte. A Jacobi update streams either three rows (two reads plus one
//! write, no reuse between rows) or two (the row above stays cached), which
//! gives the lower and upper expected-peak curves.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::membench::BandwidthPoint;
use crate::scalar::Precision;

/// Floating-point operations per Jacobi lattice update (three adds, one multiply).
pub const FLOPS_PER_LUP: f64 = 4.0;

/// Relative tolerance for checking stored peak figures.
pub const PEAK_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RooflineError {
    #[error("{field} must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("memory transfers per update must be 2 or 3, got {0}")]
    Transfers(u8),
}

impl From<RooflineError> for Error {
    fn from(e: RooflineError) -> Self {
        Error::Config(e.to_string())
    }
}

/// Compute ceiling (LUP/s), arithmetic intensity (LUP/byte) and bandwidth
/// (bytes/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflineInputs {
    pub cp: f64,
    pub ai: f64,
    pub bw: f64,
}

impl RooflineInputs {
    pub fn new(cp: f64, ai: f64, bw: f64) -> Result<Self, RooflineError> {
        for (field, value) in [("cp", cp), ("ai", ai), ("bw", bw)] {
            // NaN fails this comparison as well
            if !(value > 0.0) {
                return Err(RooflineError::NonPositive { field, value });
            }
        }
        Ok(Self { cp, ai, bw })
    }

    /// Memory roof only.
    pub fn memory_bound(ai: f64, bw: f64) -> Result<Self, RooflineError> {
        Self::new(f64::INFINITY, ai, bw)
    }
}

/// Attainable lattice updates per second.
pub fn attainable(inputs: &RooflineInputs) -> f64 {
    inputs.cp.min(inputs.ai * inputs.bw)
}

/// Bytes streamed per lattice update for a precision and transfer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StencilAiSpec {
    pub precision: Precision,
    pub transfers: u8,
}

impl StencilAiSpec {
    pub fn new(precision: Precision, transfers: u8) -> Result<Self, RooflineError> {
        if !(2..=3).contains(&transfers) {
            return Err(RooflineError::Transfers(transfers));
        }
        Ok(Self { precision, transfers })
    }

    pub fn bytes_per_lup(&self) -> u32 {
        self.precision.bytes() as u32 * u32::from(self.transfers)
    }

    /// LUP per byte.
    pub fn ai(&self) -> f64 {
        1.0 / f64::from(self.bytes_per_lup())
    }

    /// Expected GLUP/s at `bytes_per_second` with no compute ceiling.
    pub fn expected_glups(&self, bytes_per_second: f64) -> f64 {
        bytes_per_second / f64::from(self.bytes_per_lup()) / 1e9
    }
}

/// Expected-peak bounds at one worker count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPeak {
    pub workers: usize,
    pub bandwidth: f64,
    /// Three transfers per update.
    pub min_glups: f64,
    /// Two transfers per update.
    pub max_glups: f64,
}

/// Bandwidth measured at one worker count, in bytes per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthSample {
    pub workers: usize,
    pub bytes_per_second: f64,
}

impl From<&BandwidthPoint> for BandwidthSample {
    fn from(p: &BandwidthPoint) -> Self {
        Self {
            workers: p.workers,
            bytes_per_second: p.bytes_moved / p.best_seconds,
        }
    }
}

/// Lower (3 transfers) and upper (2 transfers) expected-peak curves.
/// `cp` is an optional compute ceiling in LUP/s.
pub fn expected_peak_curves(
    samples: &[BandwidthSample],
    precision: Precision,
    cp: Option<f64>,
) -> Result<Vec<ExpectedPeak>, RooflineError> {
    let three = StencilAiSpec::new(precision, 3)?;
    let two = StencilAiSpec::new(precision, 2)?;
    let cp = cp.unwrap_or(f64::INFINITY);
    samples
        .iter()
        .map(|s| {
            let lo = RooflineInputs::new(cp, three.ai(), s.bytes_per_second)?;
            let hi = RooflineInputs::new(cp, two.ai(), s.bytes_per_second)?;
            Ok(ExpectedPeak {
                workers: s.workers,
                bandwidth: s.bytes_per_second,
                min_glups: attainable(&lo) / 1e9,
                max_glups: attainable(&hi) / 1e9,
            })
        })
        .collect()
}

/// One machine's node specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub name: String,
    pub clock_ghz: f64,
    pub cores_per_processor: u32,
    pub processors: u32,
    #[serde(default = "one")]
    pub threads_per_core: u32,
    #[serde(default)]
    pub vectorization: String,
    pub dp_flops_per_cycle: u32,
    /// Peak as stated by the vendor.
    pub peak_gflops: f64,
}

fn one() -> u32 {
    1
}

impl HardwareProfile {
    pub fn cores(&self) -> u32 {
        self.cores_per_processor * self.processors
    }

    /// `clock * cores * flops/cycle`.
    pub fn computed_peak_gflops(&self) -> f64 {
        self.clock_ghz * f64::from(self.cores()) * f64::from(self.dp_flops_per_cycle)
    }

    pub fn peak_discrepancy(&self) -> f64 {
        (self.peak_gflops - self.computed_peak_gflops()).abs() / self.computed_peak_gflops()
    }

    pub fn is_consistent(&self) -> bool {
        self.peak_discrepancy() <= PEAK_TOLERANCE
    }

    /// Compute ceiling in LUP/s.
    pub fn peak_lups(&self) -> f64 {
        self.peak_gflops * 1e9 / FLOPS_PER_LUP
    }
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    profile: Vec<HardwareProfile>,
}

pub fn parse_profiles(text: &str) -> Result<Vec<HardwareProfile>> {
    let file: ProfileFile =
        toml::from_str(text).map_err(|e| Error::config(format!("profile file: {e}")))?;
    Ok(file.profile)
}

pub fn load_profiles(path: &Path) -> Result<Vec<HardwareProfile>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text)
}

const BUILTIN_PROFILES: &str = include_str!("../data/profiles.toml");

/// The four reference nodes shipped with the crate.
pub fn table1_profiles() -> Vec<HardwareProfile> {
    parse_profiles(BUILTIN_PROFILES).expect("built-in profile table parses")
}
