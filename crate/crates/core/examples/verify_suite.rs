//! Runs the oracle suite, then again with a broken halo shuffle to show
//! that the suite catches it.

use stencil_bench::harness::{verify_all, VerifyOptions};
use stencil_bench::simd::HaloShuffle;

fn main() -> stencil_bench::Result<()> {
    let good = verify_all(&VerifyOptions::default())?;
    print!("{}", good.render());
    assert!(good.passed());

    let broken = verify_all(&VerifyOptions {
        shuffle: HaloShuffle::Unrotated,
        ..VerifyOptions::default()
    })?;
    let fail = broken.first_failure().expect("mutation must be detected");
    println!("\nwith an unrotated halo shuffle: {} fails ({})", fail.name, fail.detail);
    Ok(())
}
