//! STREAM COPY bandwidth across worker counts.
//!
//! cargo run --release --example stream_copy -- [elements]

use stencil_bench::membench::{stream_copy, StreamConfig};
use stencil_bench::tasking::MonotonicClock;

fn main() -> stencil_bench::Result<()> {
    let elements = std::env::args()
        .nth(1)
        .map_or(Ok(16_000_000.0), |s| s.parse::<f64>())
        .expect("elements") as usize;
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers: Vec<usize> = (0..).map(|p| 1 << p).take_while(|&w| w <= max).collect();
    let cfg = StreamConfig {
        elements,
        runs: 5,
        workers,
        seed: 1,
    };
    println!("# workers MB/s");
    for p in stream_copy(&cfg, &MonotonicClock::default())? {
        println!("{} {:.1}", p.workers, p.mbps());
    }
    Ok(())
}
