//! Sequential and pipelined timing of the four measured stages.
//!
//!     cargo run --example pipeline_simulation

use mcuplan::fixtures::{gap9, table2};
use mcuplan::pipeline::{simulate, Mode};

fn main() -> mcuplan::Result<()> {
    let stages = table2();
    let dev = gap9();
    for mode in [Mode::Sequential, Mode::Pipelined] {
        let r = simulate(mode, &stages, &dev, 10)?;
        println!(
            "{mode:<10} frame-1 latency {:>8.2} ms  period {:>7.2} ms  {:.3} fps  bottleneck {} ({:.1}%)",
            r.first_latency_ms(),
            r.steady_state_period_ms,
            r.throughput_fps(),
            r.bottleneck,
            r.bottleneck_share * 100.0
        );
        for u in &r.stages {
            println!("    {:<14} busy {:>7.2} ms  {:>5.1}%", u.name, u.busy_ms, u.busy_fraction * 100.0);
        }
    }
    Ok(())
}
