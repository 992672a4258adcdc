//! Shows where each column of a row lands in the packed layout and what
//! the halo packs hold after a shuffle.

use stencil_bench::simd::{locate, PackedRow};

fn main() -> stencil_bench::Result<()> {
    let width = 8;
    let lanes = 2;
    let row: Vec<f64> = (0..width).map(|c| c as f64).collect();
    let packed = PackedRow::pack(&row, lanes, -1.0, 99.0)?;
    let chunk = packed.chunk_len();

    println!("width {width}, {lanes} lanes, chunk length {chunk}");
    for col in 0..width {
        let (pack, lane) = locate(col, chunk);
        println!("column {col} -> pack {pack} lane {lane}");
    }
    for j in 0..chunk + 2 {
        let role = match j {
            0 => "left halo",
            j if j == chunk + 1 => "right halo",
            _ => "interior",
        };
        println!("pack {j:>2} {:?} {role}", packed.pack_lanes(j));
    }
    assert_eq!(packed.unpack(), row);
    Ok(())
}
