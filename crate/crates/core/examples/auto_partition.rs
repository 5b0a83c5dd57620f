//! Searches the cut points of the toy model for 2 to 5 stages and checks
//! the best 4-stage split against whole-graph execution.
//!
//!     cargo run --release --example auto_partition

use mcuplan::fixtures::{gap9, toy_hggd};
use mcuplan::graph::{infer_shapes, Resolution};
use mcuplan::partition::{auto_cuts, search, verify_plan};
use mcuplan::DType;

fn main() -> mcuplan::Result<()> {
    let dev = gap9();
    let g = infer_shapes(&toy_hggd(0), Resolution::new(160, 320))?.with_storage_dtype(DType::Int8);
    for k in 2..=5 {
        let (cuts, obj) = search(&g, &dev, k)?;
        println!(
            "k={k}: cuts {cuts:?}, largest stage {} bytes, {} bytes transferred",
            obj.max_stage_bytes, obj.transfer_bytes
        );
    }

    let plan = auto_cuts(&g, &dev, 4)?;
    for (i, boundary) in plan.transfers().iter().enumerate() {
        let names: Vec<&str> = boundary.iter().map(|t| t.name.as_str()).collect();
        println!("boundary {i}: {names:?}");
    }

    // equivalence needs float execution, so check at a small resolution
    let small = infer_shapes(&toy_hggd(0), Resolution::new(32, 64))?;
    let report = verify_plan(&small, &plan.rebind(Resolution::new(32, 64), DType::Float32)?, 3, 0);
    println!("staged == whole on {} trials: {}", report.trials.len(), report.all_equal());
    Ok(())
}
