//! The `mcuplan` command line: `plan`, `simulate`, `verify` and `report`.
//!
//! Every command writes its results under `--out` and nothing else. Output
//! files carry no timestamps, so reruns with the same flags are
//! byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::executor::{exec_float, exec_int8, Activation};
use crate::fixtures::{self, Published};
use crate::graph::{infer_shapes, load_model, DType, Graph, Resolution};
use crate::memory::{memory_report, DeviceSpec, MemoryReport};
use crate::partition::{auto_cuts, random_inputs, verify_plan, EquivalenceReport, PartitionPlan, PlanFile};
use crate::pipeline::{
    jitter_model, load_stage_costs, simulate, simulate_pipelined, simulate_sequential, Mode, SimResult, StageCost,
};
use crate::quantizer::{dequantize, quantize, quantize_graph};
use crate::stats::{bootstrap_mean, shapiro_wilk, SampleSet, ShapiroWilk};

pub const BUILTIN_MODEL: &str = "builtin:toy-hggd";
pub const BUILTIN_DEVICE: &str = "builtin:gap9";
pub const BUILTIN_STAGES: &str = "builtin:table2";

/// Exit status for a verification mismatch.
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mcuplan", version, about = "Partition, quantise and time neural-network graphs for microcontrollers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition a model and write its plan and memory report.
    Plan(RunConfig),
    /// Simulate staged execution and bootstrap the per-run totals.
    Simulate(SimConfig),
    /// Check staged execution against the whole model, and int8 against float.
    Verify(VerifyConfig),
    /// Render the published measurements beside locally computed figures.
    Report(ReportConfig),
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Model JSON, or `builtin:toy-hggd`.
    #[arg(long, default_value = BUILTIN_MODEL)]
    pub model: String,
    /// Device JSON, or `builtin:gap9`.
    #[arg(long, default_value = BUILTIN_DEVICE)]
    pub device: String,
    /// `auto:K`, `plan:PATH`, or `preset` for the toy model's four stages.
    #[arg(long, default_value = "auto:4")]
    pub cuts: String,
    #[arg(long, default_value = "int8", value_parser = parse_dtype)]
    pub dtype: DType,
    /// Input resolution as WxH.
    #[arg(long = "input-res", default_value = "320x160", value_parser = parse_res)]
    pub input_res: Resolution,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimConfig {
    /// Stage-cost JSON, or `builtin:table2`.
    #[arg(long, default_value = BUILTIN_STAGES)]
    pub stages: String,
    #[arg(long, default_value = BUILTIN_DEVICE)]
    pub device: String,
    #[arg(long, default_value = "sequential", value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulated measurement runs fed to the bootstrap.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Per-stage jitter standard deviation in ms.
    #[arg(long = "noise-ms", default_value_t = 0.0)]
    pub noise_ms: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyConfig {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long, default_value_t = 5)]
    pub trials: u64,
    /// Perturb the first weight of this node in its stage (fault injection).
    #[arg(long)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportConfig {
    /// Directory holding `published.json` and `table2.json`; the shipped
    /// copies are used when omitted.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

fn parse_dtype(s: &str) -> std::result::Result<DType, String> {
    s.parse::<DType>().map_err(|e| e.to_string())
}

fn parse_res(s: &str) -> std::result::Result<Resolution, String> {
    Resolution::parse_wxh(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Errors are printed to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Plan(cfg) => cmd_plan(cfg).map(|_| 0),
        Command::Simulate(cfg) => cmd_simulate(cfg).map(|_| 0),
        Command::Verify(cfg) => {
            let report = cmd_verify(cfg)?;
            Ok(if report.equivalence.all_equal() { 0 } else { EXIT_VERIFY_FAILED })
        }
        Command::Report(cfg) => cmd_report(cfg).map(|_| 0),
    }
}

pub fn load_graph_arg(model: &str) -> Result<Graph> {
    if model == BUILTIN_MODEL {
        Ok(fixtures::toy_hggd(0))
    } else {
        load_model(Path::new(model))
    }
}

pub fn load_device_arg(device: &str) -> Result<DeviceSpec> {
    if device == BUILTIN_DEVICE {
        Ok(fixtures::gap9())
    } else {
        DeviceSpec::load(Path::new(device))
    }
}

pub fn load_stages_arg(stages: &str) -> Result<Vec<StageCost>> {
    if stages == BUILTIN_STAGES {
        Ok(fixtures::table2())
    } else {
        load_stage_costs(Path::new(stages))
    }
}

/// The plan selected by `--cuts` over `shaped`.
pub fn resolve_cuts(cuts: &str, shaped: &Graph, dev: &DeviceSpec) -> Result<PartitionPlan> {
    if cuts == "preset" {
        return fixtures::toy_hggd_plan(shaped);
    }
    if let Some(k) = cuts.strip_prefix("auto:") {
        let k: usize = k.parse().map_err(|_| Error::InvalidArgument(format!("`{cuts}`: K must be an integer")))?;
        return auto_cuts(shaped, dev, k);
    }
    if let Some(path) = cuts.strip_prefix("plan:") {
        return PartitionPlan::from_file(shaped, &PlanFile::load(Path::new(path))?);
    }
    Err(Error::InvalidArgument(format!("`--cuts {cuts}`: expected auto:K, plan:PATH or preset")))
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

type Section = (&'static str, fn(&crate::memory::StageMemory) -> u64);

/// Resolution of the unoptimised reference configuration.
pub const ORIGINAL_RES: Resolution = Resolution::new(360, 640);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutcome {
    pub plan: PlanFile,
    pub optimised: MemoryReport,
    /// Float32 at 640x360 over the same stages; `None` if it does not fit.
    pub original: Option<MemoryReport>,
}

pub fn plan_outcome(cfg: &RunConfig) -> Result<(PartitionPlan, PlanOutcome)> {
    let dev = load_device_arg(&cfg.device)?;
    let graph = load_graph_arg(&cfg.model)?;
    let shaped = infer_shapes(&graph, cfg.input_res)?.with_storage_dtype(cfg.dtype);
    let plan = resolve_cuts(&cfg.cuts, &shaped, &dev)?;
    let optimised = memory_report(&plan, &dev, cfg.dtype, cfg.input_res)?;
    let original = memory_report(&plan, &dev, DType::Float32, ORIGINAL_RES).ok();
    Ok((plan.clone(), PlanOutcome { plan: plan.to_file(), optimised, original }))
}

pub fn cmd_plan(cfg: &RunConfig) -> Result<PlanOutcome> {
    let (_, outcome) = plan_outcome(cfg)?;
    create_out(&cfg.out)?;
    outcome.plan.save(&cfg.out.join("plan.json"))?;
    write_json(&cfg.out.join("memory_report.json"), &outcome)?;
    write(&cfg.out.join("memory_report.csv"), &memory_csv(&outcome)?)?;
    write(&cfg.out.join("memory_report.md"), &memory_markdown(&outcome))?;
    Ok(outcome)
}

pub fn memory_csv(outcome: &PlanOutcome) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "stage",
        "variant",
        "dtype",
        "resolution",
        "flash_bytes",
        "kernel_bytes",
        "bias_bytes",
        "working_bytes",
        "placement",
        "l2_bytes",
        "ram_bytes",
        "weights_plus_working_bytes",
        "exceeds_flash",
    ])?;
    for (variant, report) in [("original", outcome.original.as_ref()), ("optimised", Some(&outcome.optimised))] {
        let Some(report) = report else { continue };
        for s in &report.stages {
            w.write_record([
                s.name.clone(),
                variant.to_string(),
                report.dtype.to_string(),
                report.resolution.to_string(),
                s.flash_bytes.to_string(),
                s.kernel_bytes.to_string(),
                s.bias_bytes.to_string(),
                s.working_bytes.to_string(),
                s.placement.to_string(),
                s.l2_working_bytes.to_string(),
                s.ram_bytes.to_string(),
                s.weights_plus_working_bytes.to_string(),
                s.exceeds_flash.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?).expect("csv is utf-8"))
}

fn cell(v: Option<u64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

pub fn memory_markdown(outcome: &PlanOutcome) -> String {
    let o = &outcome.optimised;
    let mut md = String::new();
    let orig_label = outcome
        .original
        .as_ref()
        .map_or("Original (does not fit)".to_string(), |r| format!("Original ({}, {})", r.dtype, r.resolution));
    let opt_label = format!("Optimised ({}, {})", o.dtype, o.resolution);
    let sections: [Section; 3] = [
        ("Flash (bytes)", |s| s.flash_bytes),
        ("L2 working set (bytes)", |s| s.l2_working_bytes),
        ("RAM (bytes)", |s| s.ram_bytes),
    ];
    for (title, get) in sections {
        let _ = writeln!(md, "## {title}\n\n| Stage | {orig_label} | {opt_label} |\n|---|---:|---:|");
        for (i, s) in o.stages.iter().enumerate() {
            let orig = outcome.original.as_ref().map(|r| get(&r.stages[i]));
            let _ = writeln!(md, "| {} | {} | {} |", s.name, cell(orig), get(s));
        }
        md.push('\n');
    }
    let _ = writeln!(md, "## Placement\n\n| Stage | Working set | Weights + working | Placement | Exceeds flash |\n|---|---:|---:|---|---|");
    for s in &o.stages {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            s.name, s.working_bytes, s.weights_plus_working_bytes, s.placement, s.exceeds_flash
        );
    }
    md
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub mode: Mode,
    pub frames: usize,
    pub first_latency_ms: f64,
    pub mean_latency_ms: f64,
    pub steady_state_period_ms: f64,
    pub throughput_fps: f64,
    pub bottleneck: String,
    pub bottleneck_share: f64,
    pub stages: Vec<crate::pipeline::Utilisation>,
    pub links: Vec<crate::pipeline::Utilisation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub samples: usize,
    pub noise_ms: f64,
    pub seed: u64,
    pub sample_mean_ms: f64,
    pub resample_size: usize,
    pub reps: usize,
    pub grand_mean_ms: f64,
    pub ci_method: &'static str,
    pub ci_level: f64,
    pub ci_low_ms: f64,
    pub ci_high_ms: f64,
    /// Absent when every sample is identical.
    pub shapiro_wilk: Option<ShapiroWilk>,
}

pub fn cmd_simulate(cfg: &SimConfig) -> Result<(SimResult, BootstrapSummary)> {
    if cfg.frames == 0 {
        return Err(Error::InvalidArgument("--frames must be at least 1".into()));
    }
    if !(cfg.noise_ms.is_finite() && cfg.noise_ms >= 0.0) {
        return Err(Error::InvalidArgument("--noise-ms must be non-negative".into()));
    }
    let stages = load_stages_arg(&cfg.stages)?;
    let dev = load_device_arg(&cfg.device)?;
    let result = simulate(cfg.mode, &stages, &dev, cfg.frames)?;
    let runs = jitter_model(&stages, &vec![cfg.noise_ms; stages.len()], cfg.seed, cfg.samples)?;
    let samples = SampleSet::new(runs)?;
    let boot = bootstrap_mean(&samples, 25, 400, cfg.seed)?;
    let sw = if samples.len() >= 3 { shapiro_wilk(&samples).ok() } else { None };
    let boot_summary = BootstrapSummary {
        samples: samples.len(),
        noise_ms: cfg.noise_ms,
        seed: cfg.seed,
        sample_mean_ms: samples.mean(),
        resample_size: boot.resample_size,
        reps: boot.reps,
        grand_mean_ms: boot.grand_mean,
        ci_method: "percentile",
        ci_level: boot.level,
        ci_low_ms: boot.ci_low,
        ci_high_ms: boot.ci_high,
        shapiro_wilk: sw,
    };
    let summary = SimSummary {
        mode: result.mode,
        frames: result.frames.len(),
        first_latency_ms: result.first_latency_ms(),
        mean_latency_ms: result.frames.iter().map(|f| f.latency_ms).sum::<f64>() / result.frames.len() as f64,
        steady_state_period_ms: result.steady_state_period_ms,
        throughput_fps: result.throughput_fps(),
        bottleneck: result.bottleneck.clone(),
        bottleneck_share: result.bottleneck_share,
        stages: result.stages.clone(),
        links: result.links.clone(),
    };

    create_out(&cfg.out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame", "start_ms", "finish_ms", "latency_ms"])?;
    for f in &result.frames {
        w.write_record([
            f.frame.to_string(),
            f.start_ms.to_string(),
            f.finish_ms.to_string(),
            f.latency_ms.to_string(),
        ])?;
    }
    let frames_csv =
        String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?).expect("utf-8");
    write(&cfg.out.join("frames.csv"), &frames_csv)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time_ms", "frame", "resource", "kind"])?;
    for e in &result.events {
        let kind = match e.kind {
            crate::pipeline::EventKind::Start => "start",
            crate::pipeline::EventKind::Finish => "finish",
        };
        w.write_record([e.time_ms.to_string(), e.frame.to_string(), e.resource.clone(), kind.to_string()])?;
    }
    let events_csv =
        String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?).expect("utf-8");
    write(&cfg.out.join("events.csv"), &events_csv)?;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    write_json(&cfg.out.join("bootstrap.json"), &boot_summary)?;
    samples.write_csv(&cfg.out.join("samples.csv"), "total_ms")?;
    Ok((result, boot_summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Int8Error {
    pub trial: u64,
    pub output: String,
    pub max_abs: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Int8Summary {
    pub trials: Vec<Int8Error>,
    pub max_abs: f64,
    /// Set when the int8 path could not run at all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub equivalence: EquivalenceReport,
    /// Present for `--dtype int8`; informational only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub int8: Option<Int8Summary>,
}

/// Dequantised int8 outputs against float outputs on seeded inputs. The
/// first input set doubles as calibration data.
pub fn int8_error_summary(shaped: &Graph, trials: u64, seed: u64) -> Int8Summary {
    let run = || -> Result<Vec<Int8Error>> {
        let inputs_for = |trial: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            random_inputs(shaped, &mut rng)
        };
        let q = quantize_graph(shaped, &[inputs_for(0)?])?;
        let mut out = Vec::new();
        for trial in 0..trials {
            let inputs = inputs_for(trial)?;
            let float = exec_float(shaped, &inputs)?;
            let qin: BTreeMap<_, _> =
                inputs.iter().map(|(name, a)| (name.clone(), quantize(a, q.activation_params()[name]))).collect();
            let qout = exec_int8(&q, &qin)?;
            for (name, f) in &float {
                let d: Activation = dequantize(&qout[name]);
                let c = crate::executor::compare_outputs(f, &d)?;
                out.push(Int8Error { trial, output: name.clone(), max_abs: c.max_abs, max_rel: c.max_rel });
            }
        }
        Ok(out)
    };
    match run() {
        Ok(trials) => {
            let max_abs = trials.iter().map(|t| t.max_abs).fold(0.0, f64::max);
            Int8Summary { trials, max_abs, error: None }
        }
        Err(e) => Int8Summary { trials: Vec::new(), max_abs: f64::NAN, error: Some(e.to_string()) },
    }
}

pub fn cmd_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let run = &cfg.run;
    let dev = load_device_arg(&run.device)?;
    let graph = load_graph_arg(&run.model)?;
    let shaped = infer_shapes(&graph, run.input_res)?;
    let mut plan = resolve_cuts(&run.cuts, &shaped, &dev)?;
    if let Some(id) = &cfg.corrupt {
        let stage = plan
            .stages_mut()
            .iter_mut()
            .find(|s| s.nodes.contains(id))
            .ok_or_else(|| Error::InvalidArgument(format!("--corrupt: no node `{id}`")))?;
        let (weights, _) = stage.graph.node_weights_mut(id).expect("node is in its stage");
        let w =
            weights.as_mut().ok_or_else(|| Error::InvalidArgument(format!("--corrupt: node `{id}` has no weights")))?;
        let mut kernel = w.kernel.to_vec();
        kernel[0] += 1.0;
        w.kernel = kernel.into();
    }
    let equivalence = verify_plan(&shaped, &plan, cfg.trials, run.seed);
    let int8 = (run.dtype == DType::Int8).then(|| int8_error_summary(&shaped, cfg.trials, run.seed));
    let report = VerifyReport { equivalence, int8 };
    create_out(&run.out)?;
    write_json(&run.out.join("verify.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub markdown: String,
    pub csv: String,
}

fn load_fixture_stages(dir: Option<&Path>) -> Result<Vec<StageCost>> {
    match dir {
        Some(d) => load_stage_costs(&d.join("table2.json")),
        None => Ok(fixtures::table2()),
    }
}

pub fn cmd_report(cfg: &ReportConfig) -> Result<ReportOutcome> {
    let published = match &cfg.fixtures {
        Some(dir) => Published::load(dir)?,
        None => fixtures::published(),
    };
    let stages = load_fixture_stages(cfg.fixtures.as_deref())?;
    let dev = load_device_arg(&cfg.run.device)?;
    let mut run = cfg.run.clone();
    if run.model == BUILTIN_MODEL && run.cuts == "auto:4" {
        run.cuts = "preset".into();
    }
    let (_, computed) = plan_outcome(&run)?;
    let free = DeviceSpec { link_latency_s: 0.0, ..dev.clone() };
    let seq = simulate_sequential(&stages, &free, 1)?;
    let pipe = simulate_pipelined(&stages, &free, 50)?;

    let mut md = String::new();
    let _ = writeln!(md, "# Deployment report\n\n{}\n", published.provenance);
    let _ = writeln!(
        md,
        "## Published memory measurements (bytes)\n\n| Memory | Model | Original | Optimised |\n|---|---|---:|---:|"
    );
    for m in &published.memory {
        let _ = writeln!(md, "| {} | {} | {} | {} |", m.memory, m.model, cell(m.original), cell(m.optimised));
    }
    let _ = writeln!(
        md,
        "\n## Published inference time per stage (ms)\n\n| Model | Time (ms) | Cycles at {} Hz |\n|---|---:|---:|",
        published.clock_hz
    );
    for l in &published.latency_ms {
        let cycles = crate::pipeline::ms_to_cycles(l.ms, published.clock_hz)?;
        let _ = writeln!(md, "| {} | {} | {} |", l.model, l.ms, cycles);
    }
    let _ = writeln!(
        md,
        "\nReported total: {} ± {} ms; the point-feature stage ran {} passes.\n\
         Reported bootstrap: {} samples drawn with replacement, {} repetitions; Shapiro–Wilk p = {}.\n",
        published.total_ms,
        published.total_pm_ms,
        published.pointnet_passes,
        published.bootstrap_resample_size,
        published.bootstrap_reps,
        published.shapiro_wilk_p
    );
    let _ = writeln!(md, "## Simulated from the stage-time fixture\n");
    let _ = writeln!(md, "| Quantity | Value |\n|---|---:|");
    let _ = writeln!(md, "| Sequential total (ms) | {:.2} |", seq.first_latency_ms());
    let _ =
        writeln!(md, "| Difference from reported total (ms) | {:.2} |", seq.first_latency_ms() - published.total_ms);
    let _ = writeln!(md, "| Bottleneck stage | {} |", seq.bottleneck);
    let _ = writeln!(md, "| Bottleneck share of total | {:.1}% |", 100.0 * seq.bottleneck_share);
    let _ = writeln!(md, "| Pipelined steady-state period (ms) | {:.2} |", pipe.steady_state_period_ms);
    let _ = writeln!(md, "| Pipelined frame-1 latency (ms) | {:.2} |", pipe.first_latency_ms());
    let _ = writeln!(
        md,
        "\n## Computed on the built-in toy model\n\nThe toy model shares the stage structure, not the sizes, of the measured deployment.\n"
    );
    md.push_str(&memory_markdown(&computed));
    let in_ratio =
        (run.input_res.height * run.input_res.width) as f64 / (ORIGINAL_RES.height * ORIGINAL_RES.width) as f64;
    let _ = writeln!(
        md,
        "\nInput area at {} is {:.4} of {} ({:.1}% smaller).",
        run.input_res,
        in_ratio,
        ORIGINAL_RES,
        100.0 * (1.0 - in_ratio)
    );

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "quantity", "model", "variant", "value"])?;
    for m in &published.memory {
        for (variant, v) in [("original", m.original), ("optimised", m.optimised)] {
            w.write_record(["published", &format!("{}_bytes", m.memory), &m.model, variant, &cell(v)])?;
        }
    }
    for l in &published.latency_ms {
        w.write_record(["published", "time_ms", &l.model, "", &l.ms.to_string()])?;
    }
    for (variant, report) in [("original", computed.original.as_ref()), ("optimised", Some(&computed.optimised))] {
        let Some(report) = report else { continue };
        for s in &report.stages {
            for (q, v) in [("flash_bytes", s.flash_bytes), ("l2_bytes", s.l2_working_bytes), ("ram_bytes", s.ram_bytes)]
            {
                w.write_record(["computed", q, &s.name, variant, &v.to_string()])?;
            }
        }
    }
    w.write_record(["computed", "sequential_total_ms", "", "", &format!("{:.2}", seq.first_latency_ms())])?;
    w.write_record(["computed", "pipelined_period_ms", "", "", &format!("{:.2}", pipe.steady_state_period_ms)])?;
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?).expect("utf-8");

    create_out(&cfg.run.out)?;
    write(&cfg.run.out.join("report.md"), &md)?;
    write(&cfg.run.out.join("report.csv"), &csv)?;
    Ok(ReportOutcome { markdown: md, csv })
}
