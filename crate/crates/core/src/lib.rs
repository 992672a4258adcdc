//! Task-parallel stencil benchmarks.
//!
//! * [`tasking`]: fixed worker pool, static block scheduling, first-touch
//!   allocation, one-shot futures and injectable clocks.
//! * [`simd`]: fixed-lane packs and the Virtual Node Scheme row layout.
//! * [`locality`]: step-tagged message passing, in process or over TCP.
//! * [`stencil1d`]: distributed explicit 1D heat solver.
//! * [`stencil2d`]: scalar and packed 2D Jacobi kernels.
//! * [`membench`]: STREAM COPY bandwidth probe.
//! * [`roofline`]: arithmetic intensity and expected-peak model.
//! * [`harness`]: configuration, sweeps, verification and reporting.

pub mod error;
pub mod harness;
pub mod locality;
pub mod membench;
pub mod record;
pub mod roofline;
pub mod scalar;
pub mod simd;
pub mod stencil1d;
pub mod stencil2d;
pub mod tasking;

pub use error::{Error, Result};
