//! Roofline bounds for the reference machines and a sanity check of their
//! advertised peaks.

use stencil_bench::roofline::{attainable, table1_profiles, RooflineInputs, StencilAiSpec};
use stencil_bench::scalar::Precision;

fn main() -> stencil_bench::Result<()> {
    for p in table1_profiles() {
        println!(
            "{:<24} {:>3} cores  stated {:>7.1} GFLOP/s  computed {:>7.1}  {}",
            p.name,
            p.cores(),
            p.peak_gflops,
            p.computed_peak_gflops(),
            if p.is_consistent() { "ok" } else { "MISMATCH" }
        );
    }

    let bw = 48e9;
    println!("\nat {} GB/s:", bw / 1e9);
    for precision in [Precision::F32, Precision::F64] {
        for transfers in [3, 2] {
            let spec = StencilAiSpec::new(precision, transfers)?;
            let glups = attainable(&RooflineInputs::memory_bound(spec.ai(), bw)?) / 1e9;
            println!(
                "  {} {} transfers: AI 1/{} -> {glups:.3} GLUP/s",
                precision.as_str(),
                transfers,
                spec.bytes_per_lup()
            );
        }
    }
    Ok(())
}
