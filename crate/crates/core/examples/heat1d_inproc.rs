//! Strong-scaling sweep of the 1D heat solver over in-process localities.
//!
//! cargo run --release --example heat1d_inproc -- [points] [steps]

use std::sync::Arc;

use stencil_bench::stencil1d::{format_checksum, run_1d, Run1dConfig};
use stencil_bench::tasking::MonotonicClock;

fn main() -> stencil_bench::Result<()> {
    let mut args = std::env::args().skip(1);
    let points: u64 = args.next().map_or(Ok(1_000_000), |s| s.parse()).expect("points");
    let steps: usize = args.next().map_or(Ok(100), |s| s.parse()).expect("steps");

    let clock = Arc::new(MonotonicClock::default());
    let mut base = None;
    println!("# localities seconds speedup checksum");
    for localities in [1, 2, 4, 8] {
        let cfg = Run1dConfig {
            points,
            steps,
            localities,
            ..Run1dConfig::default()
        };
        let rec = run_1d(&cfg, clock.clone())?;
        let t1 = *base.get_or_insert(rec.wall_seconds);
        println!(
            "{localities} {:.6} {:.2} {}",
            rec.wall_seconds,
            t1 / rec.wall_seconds,
            format_checksum(rec.checksum.unwrap_or_default())
        );
    }
    Ok(())
}
