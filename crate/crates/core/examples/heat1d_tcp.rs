//! The same 1D solve over real TCP sockets on loopback, compared against
//! the in-process transport. Checksums must agree to the last bit.

use std::sync::Arc;

use stencil_bench::locality::{in_process_cluster, tcp_loopback_cluster};
use stencil_bench::stencil1d::{drive_cluster, format_checksum, Decomposition, HeatParams, InitialCondition, Solve1d};
use stencil_bench::tasking::MonotonicClock;

fn main() -> stencil_bench::Result<()> {
    let localities = 4;
    let solve = Solve1d {
        decomposition: Decomposition::new(200_000, localities, 4)?,
        steps: 50,
        params: HeatParams::default(),
        init: InitialCondition::Sawtooth,
        repetitions: 1,
    };
    let clock = Arc::new(MonotonicClock::default());

    let tcp = drive_cluster(tcp_loopback_cluster(localities)?, &solve, 1, clock.clone(), false)?;
    let inproc = drive_cluster(in_process_cluster(localities)?, &solve, 1, clock, false)?;

    println!("tcp     {:.4}s checksum {}", tcp.seconds[0], format_checksum(tcp.checksum));
    println!("inproc  {:.4}s checksum {}", inproc.seconds[0], format_checksum(inproc.checksum));
    assert_eq!(tcp.checksum.to_bits(), inproc.checksum.to_bits());
    println!("checksums identical");

    // For separate processes use the CLI:
    //   stencilbench stencil1d --locality 0/2 --peers 127.0.0.1:7000,127.0.0.1:7001
    //   stencilbench stencil1d --locality 1/2 --peers 127.0.0.1:7000,127.0.0.1:7001
    Ok(())
}
