//! 2D Jacobi throughput: scalar kernel against the packed kernel at a few
//! lane counts, in both precisions.

use stencil_bench::scalar::Precision;
use stencil_bench::stencil2d::{run_2d, Kernel, Run2dConfig};
use stencil_bench::tasking::MonotonicClock;

fn main() -> stencil_bench::Result<()> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let clock = MonotonicClock::default();
    println!("# precision kernel lanes GLUP/s");
    for precision in [Precision::F32, Precision::F64] {
        for (kernel, lanes) in [(Kernel::Scalar, 1), (Kernel::Packed, 4), (Kernel::Packed, 8), (Kernel::Packed, 16)] {
            let cfg = Run2dConfig {
                width: 1024,
                height: 512,
                steps: 50,
                workers,
                precision,
                kernel,
                lanes,
                runs: 3,
            };
            let rec = run_2d(&cfg, &clock)?;
            println!("{} {:?} {lanes} {:.3}", precision.as_str(), kernel, rec.metric);
        }
    }
    Ok(())
}
