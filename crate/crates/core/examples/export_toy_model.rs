//! Writes the built-in toy model (JSON plus weight sidecars) and its
//! four-stage plan to a directory.
//!
//!     cargo run --example export_toy_model -- /tmp/toy

use std::path::PathBuf;

use mcuplan::fixtures::{toy_hggd, toy_hggd_plan};
use mcuplan::graph::{infer_shapes, save_model, Resolution};

fn main() -> mcuplan::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy_model".into()));
    std::fs::create_dir_all(&dir).map_err(|e| mcuplan::Error::io(&dir, e))?;

    let g = toy_hggd(0);
    let model = save_model(&g, &dir, "toy_hggd")?;
    let plan = toy_hggd_plan(&infer_shapes(&g, Resolution::new(160, 320))?)?;
    let plan_path = dir.join("toy_hggd_plan.json");
    plan.to_file().save(&plan_path)?;

    println!("model: {} ({} nodes)", model.display(), g.nodes().len());
    println!("plan:  {}", plan_path.display());
    for (stage, boundary) in plan.stages().iter().zip(plan.transfers().iter().map(Some).chain([None])) {
        let out: Vec<&str> = boundary.map_or(vec![], |b| b.iter().map(|t| t.name.as_str()).collect());
        println!("  {:<14} {:>2} nodes  -> {:?}", stage.name, stage.nodes.len(), out);
    }
    Ok(())
}
