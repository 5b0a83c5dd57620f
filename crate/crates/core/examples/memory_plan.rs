//! Per-stage memory of the toy model's four-stage plan, int8 at 320x160
//! against float32 at 640x360, with row tiling of the largest convolution.
//!
//!     cargo run --example memory_plan

use mcuplan::fixtures::{gap9, toy_hggd, toy_hggd_plan};
use mcuplan::graph::{infer_shapes, LayerKind, Resolution};
use mcuplan::memory::{memory_report, tile_plan, ConvGeometry};
use mcuplan::DType;

fn main() -> mcuplan::Result<()> {
    let dev = gap9();
    let small = Resolution::new(160, 320);
    let g = infer_shapes(&toy_hggd(0), small)?.with_storage_dtype(DType::Int8);
    let plan = toy_hggd_plan(&g)?;

    let optimised = memory_report(&plan, &dev, DType::Int8, small)?;
    let original = memory_report(&plan, &dev, DType::Float32, Resolution::new(360, 640))?;
    println!("{:<14} {:>10} {:>12} {:>12} {:>6}", "stage", "flash", "working", "orig work", "where");
    for (o, f) in optimised.stages.iter().zip(&original.stages) {
        println!(
            "{:<14} {:>10} {:>12} {:>12} {:>6}",
            o.name, o.flash_bytes, o.working_bytes, f.working_bytes, o.placement
        );
    }

    let (id, _) = g
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Conv2d { .. }))
        .map(|n| (n.id.clone(), g.tensor(&n.output).unwrap().byte_size()))
        .max_by_key(|(_, b)| *b)
        .unwrap();
    let conv = ConvGeometry::from_node(&g, &id)?;
    let tiles = tile_plan(&conv, dev.l1_bytes)?;
    println!(
        "\n{id}: {} tiles of {} rows in {} bytes of L1 ({} bytes moved)",
        tiles.n_tiles, tiles.tile_rows, tiles.buffer_bytes, tiles.transfer_bytes_total
    );
    Ok(())
}
