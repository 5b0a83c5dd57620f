//! Renders the published figures beside locally computed ones, as the
//! `report` subcommand does.
//!
//!     cargo run --example deployment_report -- /tmp/report

use std::path::PathBuf;

use mcuplan::cli::{cmd_report, ReportConfig, RunConfig};
use mcuplan::graph::Resolution;
use mcuplan::DType;

fn main() -> mcuplan::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "report".into()));
    let cfg = ReportConfig {
        fixtures: None,
        run: RunConfig {
            model: "builtin:toy-hggd".into(),
            device: "builtin:gap9".into(),
            cuts: "preset".into(),
            dtype: DType::Int8,
            input_res: Resolution::new(160, 320),
            seed: 0,
            out,
        },
    };
    print!("{}", cmd_report(&cfg)?.markdown);
    Ok(())
}
