//! Drives a sweep from a key = value configuration, the same format
//! `stencilbench suite --config` reads.

use stencil_bench::harness::{render_speedups, run_suite, speedup_table, BenchConfig};

const CONFIG: &str = "
benchmark = stencil2d
label = jacobi-sweep
workers = 1,2,4
width = 512
height = 256
steps = 20
kernel = packed
lanes = 8
precision = f32
";

fn main() -> stencil_bench::Result<()> {
    let mut cfg = BenchConfig::parse(CONFIG)?;
    cfg.out_dir = std::env::temp_dir().join("stencil-bench-example");
    let out = run_suite(&cfg)?;
    print!("{}", out.dat_text());
    println!("series in {}", out.dat_path.display());
    print!("{}", render_speedups(&speedup_table(&out.records)));
    Ok(())
}
