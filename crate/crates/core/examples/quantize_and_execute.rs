//! Calibrates int8 scales on one random input, then compares the int8
//! and float32 outputs on fresh inputs.
//!
//!     cargo run --release --example quantize_and_execute

use std::collections::BTreeMap;

use mcuplan::compare_outputs;
use mcuplan::executor::{exec_float, exec_int8};
use mcuplan::fixtures::toy_hggd;
use mcuplan::graph::{infer_shapes, Resolution};
use mcuplan::partition::random_inputs;
use mcuplan::quantizer::{dequantize, quantize, quantize_graph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mcuplan::Result<()> {
    // small resolution keeps the float reference quick
    let g = infer_shapes(&toy_hggd(0), Resolution::new(32, 64))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = quantize_graph(&g, &[random_inputs(&g, &mut rng)?])?;

    for trial in 0..3 {
        let inputs = random_inputs(&g, &mut rng)?;
        let float = exec_float(&g, &inputs)?;
        let qin: BTreeMap<_, _> =
            inputs.iter().map(|(k, v)| (k.clone(), quantize(v, q.activation_params()[k]))).collect();
        let int8 = exec_int8(&q, &qin)?;
        for (name, f) in &float {
            let c = compare_outputs(f, &dequantize(&int8[name]))?;
            let range = f.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            println!("trial {trial} {name:<12} max |err| {:.4} (output range {range:.3})", c.max_abs);
        }
    }
    Ok(())
}
