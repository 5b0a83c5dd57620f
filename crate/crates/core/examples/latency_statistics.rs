//! Jittered end-to-end timings, bootstrapped the way the measurements
//! were: 1000 means of 25 draws, then a normality check on the means.
//!
//!     cargo run --example latency_statistics

use mcuplan::fixtures::table2;
use mcuplan::pipeline::jitter_model;
use mcuplan::stats::{bootstrap_mean, shapiro_wilk, SampleSet};

fn main() -> mcuplan::Result<()> {
    let stages = table2();
    let runs = jitter_model(&stages, &[0.02, 0.05, 0.5, 0.01], 7, 100)?;
    let samples = SampleSet::new(runs)?;
    let b = bootstrap_mean(&samples, 25, 1000, 7)?;
    let sw = shapiro_wilk(&SampleSet::new(b.means.clone())?)?;

    println!("runs:      mean {:.3} ms, sd {:.3} ms", samples.mean(), samples.std_dev());
    println!("bootstrap: {:.3} ms, 95% CI [{:.3}, {:.3}]", b.grand_mean, b.ci_low, b.ci_high);
    println!("Shapiro–Wilk on the means: W = {:.4}, p = {:.3}", sw.w, sw.p_value);
    Ok(())
}
