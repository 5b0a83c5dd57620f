//! Infers every tensor shape of the toy model at two input resolutions.
//!
//!     cargo run --example shape_inference

use mcuplan::fixtures::toy_hggd;
use mcuplan::graph::{infer_shapes, topo_order, Resolution};

fn main() -> mcuplan::Result<()> {
    let g = toy_hggd(0);
    let small = infer_shapes(&g, Resolution::new(160, 320))?;
    let large = infer_shapes(&g, Resolution::new(360, 640))?;

    println!("{:<16} {:<10} {:>16} {:>16}", "node", "kind", "320x160", "640x360");
    for id in topo_order(&g) {
        let node = g.node(&id).unwrap();
        let a = &small.tensor(&node.output)?.dims;
        let b = &large.tensor(&node.output)?.dims;
        println!("{:<16} {:<10} {:>16} {:>16}", id, node.kind.name(), format!("{a:?}"), format!("{b:?}"));
    }
    Ok(())
}
