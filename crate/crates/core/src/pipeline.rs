//! Timing of staged inference on one device (sequential, with model swaps)
//! or on one device per stage (pipelined, with inter-device links).

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::DeviceSpec;

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCost {
    pub name: String,
    /// Time of one pass.
    pub compute_ms: f64,
    #[serde(default = "one")]
    pub passes: u32,
    /// Payload loaded before the stage runs in sequential mode.
    #[serde(default)]
    pub weight_bytes: u64,
    /// Bytes sent to the next stage in pipelined mode.
    #[serde(default)]
    pub transfer_out_bytes: u64,
}

impl StageCost {
    pub fn new(name: impl Into<String>, compute_ms: f64, passes: u32) -> Self {
        Self { name: name.into(), compute_ms, passes, weight_bytes: 0, transfer_out_bytes: 0 }
    }

    pub fn total_ms(&self) -> f64 {
        self.compute_ms * self.passes as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compute_ms.is_finite() && self.compute_ms >= 0.0) {
            return Err(Error::InvalidArgument(format!("stage `{}`: compute_ms must be non-negative", self.name)));
        }
        if self.passes == 0 {
            return Err(Error::InvalidArgument(format!("stage `{}`: passes must be at least 1", self.name)));
        }
        Ok(())
    }
}

pub fn parse_stage_costs(text: &str) -> Result<Vec<StageCost>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let stages: Vec<StageCost> = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Parse { path: e.path().to_string(), message: e.inner().to_string() })?;
    validate_stages(&stages)?;
    Ok(stages)
}

pub fn load_stage_costs(path: &Path) -> Result<Vec<StageCost>> {
    parse_stage_costs(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn validate_stages(stages: &[StageCost]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::InvalidArgument("at least one stage is required".into()));
    }
    stages.iter().try_for_each(StageCost::validate)
}

pub fn cycles_to_ms(cycles: u64, clock_hz: f64) -> Result<f64> {
    if !(clock_hz.is_finite() && clock_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("clock must be positive, got {clock_hz} Hz")));
    }
    Ok(cycles as f64 / clock_hz * 1000.0)
}

/// Nearest whole cycle count for a duration.
pub fn ms_to_cycles(ms: f64, clock_hz: f64) -> Result<u64> {
    if !(clock_hz.is_finite() && clock_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("clock must be positive, got {clock_hz} Hz")));
    }
    if !(ms.is_finite() && ms >= 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be non-negative, got {ms} ms")));
    }
    Ok((ms / 1000.0 * clock_hz).round() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sequential,
    Pipelined,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "pipelined" => Ok(Mode::Pipelined),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}` (sequential|pipelined)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "sequential",
            Mode::Pipelined => "pipelined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Start,
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_ms: f64,
    pub frame: usize,
    /// Stage name, `load:<stage>` or `link:<from>-><to>`.
    pub resource: String,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame: usize,
    pub start_ms: f64,
    pub finish_ms: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utilisation {
    pub name: String,
    /// Busy time per frame.
    pub busy_ms: f64,
    /// Busy time per frame over the steady-state period.
    pub busy_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mode: Mode,
    pub frames: Vec<FrameTiming>,
    pub steady_state_period_ms: f64,
    pub stages: Vec<Utilisation>,
    pub links: Vec<Utilisation>,
    /// Resource with the largest busy time per frame.
    pub bottleneck: String,
    /// Bottleneck busy time over the first frame's latency.
    pub bottleneck_share: f64,
    pub events: Vec<Event>,
}

impl SimResult {
    pub fn first_latency_ms(&self) -> f64 {
        self.frames[0].latency_ms
    }

    pub fn throughput_fps(&self) -> f64 {
        1000.0 / self.steady_state_period_ms
    }
}

fn check_frames(frames: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::InvalidArgument("frames must be at least 1".into()));
    }
    Ok(())
}

fn sort_events(events: &mut [Event], order: &[String]) {
    let rank = |r: &str| order.iter().position(|o| o == r).unwrap_or(usize::MAX);
    events.sort_by(|a, b| {
        a.time_ms
            .total_cmp(&b.time_ms)
            .then(a.kind.cmp(&b.kind).reverse())
            .then(a.frame.cmp(&b.frame))
            .then(rank(&a.resource).cmp(&rank(&b.resource)))
    });
}

fn bottleneck(resources: &[(String, f64)], latency: f64) -> (String, f64) {
    // first resource wins ties
    let (name, busy) =
        resources
            .iter()
            .fold((String::new(), f64::NEG_INFINITY), |acc, (n, b)| if *b > acc.1 { (n.clone(), *b) } else { acc });
    (name, if latency > 0.0 { busy / latency } else { 0.0 })
}

/// One device runs every stage of a frame in turn, loading each stage's
/// weights first. Frames run back to back.
pub fn simulate_sequential(stages: &[StageCost], dev: &DeviceSpec, frames: usize) -> Result<SimResult> {
    validate_stages(stages)?;
    check_frames(frames)?;
    let load_ms: Vec<f64> =
        stages.iter().map(|s| s.weight_bytes as f64 / dev.load_bandwidth_bytes_per_s * 1000.0).collect();
    let mut events = Vec::new();
    let mut timings = Vec::with_capacity(frames);
    let mut t = 0.0f64;
    for frame in 0..frames {
        let start = t;
        for (s, stage) in stages.iter().enumerate() {
            if stage.weight_bytes > 0 {
                let resource = format!("load:{}", stage.name);
                events.push(Event { time_ms: t, frame, resource: resource.clone(), kind: EventKind::Start });
                t += load_ms[s];
                events.push(Event { time_ms: t, frame, resource, kind: EventKind::Finish });
            }
            events.push(Event { time_ms: t, frame, resource: stage.name.clone(), kind: EventKind::Start });
            t += stage.total_ms();
            events.push(Event { time_ms: t, frame, resource: stage.name.clone(), kind: EventKind::Finish });
        }
        timings.push(FrameTiming { frame, start_ms: start, finish_ms: t, latency_ms: t - start });
    }
    let period = timings[0].latency_ms;
    let busy: Vec<(String, f64)> =
        stages.iter().zip(&load_ms).map(|(s, l)| (s.name.clone(), s.total_ms() + l)).collect();
    let utilisation = busy
        .iter()
        .map(|(name, b)| Utilisation {
            name: name.clone(),
            busy_ms: *b,
            busy_fraction: if period > 0.0 { b / period } else { 0.0 },
        })
        .collect();
    let (bottleneck, bottleneck_share) = bottleneck(&busy, period);
    Ok(SimResult {
        mode: Mode::Sequential,
        frames: timings,
        steady_state_period_ms: period,
        stages: utilisation,
        links: Vec::new(),
        bottleneck,
        bottleneck_share,
        events,
    })
}

/// Time on the link leaving stage `i`.
pub fn transfer_ms(stage: &StageCost, dev: &DeviceSpec) -> f64 {
    (stage.transfer_out_bytes as f64 / dev.link_bandwidth_bytes_per_s + dev.link_latency_s) * 1000.0
}

/// One device per stage; frames are all ready at time zero. Each link
/// carries one transfer at a time and overlaps with compute.
pub fn simulate_pipelined(stages: &[StageCost], dev: &DeviceSpec, frames: usize) -> Result<SimResult> {
    validate_stages(stages)?;
    check_frames(frames)?;
    let k = stages.len();
    let link_names: Vec<String> = stages.windows(2).map(|w| format!("link:{}->{}", w[0].name, w[1].name)).collect();
    let xfer: Vec<f64> = stages[..k - 1].iter().map(|s| transfer_ms(s, dev)).collect();
    let mut stage_free = vec![0.0f64; k];
    let mut link_free = vec![0.0f64; k.saturating_sub(1)];
    let mut events = Vec::new();
    let mut timings = Vec::with_capacity(frames);
    for frame in 0..frames {
        let mut arrive = 0.0f64;
        let mut first_start = 0.0;
        for (i, stage) in stages.iter().enumerate() {
            let start = stage_free[i].max(arrive);
            let finish = start + stage.total_ms();
            if i == 0 {
                first_start = start;
            }
            stage_free[i] = finish;
            events.push(Event { time_ms: start, frame, resource: stage.name.clone(), kind: EventKind::Start });
            events.push(Event { time_ms: finish, frame, resource: stage.name.clone(), kind: EventKind::Finish });
            if i + 1 < k {
                let link_start = finish.max(link_free[i]);
                arrive = link_start + xfer[i];
                link_free[i] = arrive;
                if xfer[i] > 0.0 {
                    let resource = link_names[i].clone();
                    events.push(Event {
                        time_ms: link_start,
                        frame,
                        resource: resource.clone(),
                        kind: EventKind::Start,
                    });
                    events.push(Event { time_ms: arrive, frame, resource, kind: EventKind::Finish });
                }
            } else {
                timings.push(FrameTiming {
                    frame,
                    start_ms: first_start,
                    finish_ms: finish,
                    latency_ms: finish - first_start,
                });
            }
        }
    }
    let mut order: Vec<String> = Vec::new();
    for (i, s) in stages.iter().enumerate() {
        order.push(s.name.clone());
        if let Some(l) = link_names.get(i) {
            order.push(l.clone());
        }
    }
    sort_events(&mut events, &order);

    let stage_busy: Vec<(String, f64)> = stages.iter().map(|s| (s.name.clone(), s.total_ms())).collect();
    let link_busy: Vec<(String, f64)> = link_names.iter().cloned().zip(xfer.iter().copied()).collect();
    let period = stage_busy.iter().chain(&link_busy).map(|(_, b)| *b).fold(0.0, f64::max);
    let util = |v: &[(String, f64)]| {
        v.iter()
            .map(|(name, b)| Utilisation {
                name: name.clone(),
                busy_ms: *b,
                busy_fraction: if period > 0.0 { b / period } else { 0.0 },
            })
            .collect::<Vec<_>>()
    };
    let all: Vec<(String, f64)> =
        order.iter().map(|n| stage_busy.iter().chain(&link_busy).find(|(m, _)| m == n).cloned().unwrap()).collect();
    let (bottleneck, bottleneck_share) = bottleneck(&all, timings[0].latency_ms);
    Ok(SimResult {
        mode: Mode::Pipelined,
        frames: timings,
        steady_state_period_ms: period,
        stages: util(&stage_busy),
        links: util(&link_busy),
        bottleneck,
        bottleneck_share,
        events,
    })
}

pub fn simulate(mode: Mode, stages: &[StageCost], dev: &DeviceSpec, frames: usize) -> Result<SimResult> {
    match mode {
        Mode::Sequential => simulate_sequential(stages, dev, frames),
        Mode::Pipelined => simulate_pipelined(stages, dev, frames),
    }
}

/// Per-run totals with Gaussian noise of standard deviation `noise_ms[i]`
/// added to each stage total, redrawn while negative.
pub fn jitter_model(stages: &[StageCost], noise_ms: &[f64], seed: u64, runs: usize) -> Result<Vec<f64>> {
    validate_stages(stages)?;
    if noise_ms.len() != stages.len() {
        return Err(Error::InvalidArgument(format!("{} noise values for {} stages", noise_ms.len(), stages.len())));
    }
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    let dists = stages
        .iter()
        .zip(noise_ms)
        .map(|(s, &sd)| {
            Normal::new(s.total_ms(), sd).map_err(|e| Error::InvalidArgument(format!("stage `{}` noise: {e}", s.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..runs)
        .map(|_| {
            dists
                .iter()
                .map(|d| loop {
                    let x = d.sample(&mut rng);
                    if x >= 0.0 {
                        break x;
                    }
                })
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_links() -> DeviceSpec {
        DeviceSpec { link_latency_s: 0.0, ..DeviceSpec::gap9() }
    }

    #[test]
    fn cycle_conversion() {
        assert!((cycles_to_ms(5_598_100, 370e6).unwrap() - 15.13).abs() < 1e-9);
        assert_eq!(cycles_to_ms(0, 370e6).unwrap(), 0.0);
        assert!((cycles_to_ms(370_000_000, 370e6).unwrap() - 1000.0).abs() < 1e-12);
        assert!(cycles_to_ms(1, 0.0).is_err());
        assert_eq!(ms_to_cycles(15.13, 370e6).unwrap(), 5_598_100);
    }

    #[test]
    fn single_stage_sequential() {
        let r = simulate_sequential(&[StageCost::new("s", 10.0, 1)], &free_links(), 3).unwrap();
        assert!(r.frames.iter().all(|f| f.latency_ms == 10.0));
        assert_eq!(r.steady_state_period_ms, 10.0);
        assert_eq!(r.frames[2].finish_ms, 30.0);
    }

    #[test]
    fn replicated_passes_multiply() {
        // the rounded per-pass time lands within 0.01 ms of the stage total
        assert!((StageCost::new("p", 10.5435, 64).total_ms() - 674.79).abs() < 0.01);
        // the unrounded one reproduces it exactly (division by 64 is exact)
        assert_eq!(StageCost::new("p", 674.79 / 64.0, 64).total_ms(), 674.79);
        assert_eq!(674.79 / 64.0, 10.54359375);
    }

    #[test]
    fn two_stage_pipeline_unrolled() {
        let stages = [StageCost::new("a", 5.0, 1), StageCost::new("b", 5.0, 1)];
        let r = simulate_pipelined(&stages, &free_links(), 3).unwrap();
        let finishes: Vec<f64> = r.frames.iter().map(|f| f.finish_ms).collect();
        assert_eq!(finishes, vec![10.0, 15.0, 20.0]);
        assert_eq!(r.steady_state_period_ms, 5.0);
    }

    #[test]
    fn one_stage_pipeline_matches_sequential() {
        let stages = [StageCost::new("a", 7.25, 2)];
        let p = simulate_pipelined(&stages, &free_links(), 4).unwrap();
        let s = simulate_sequential(&stages, &free_links(), 4).unwrap();
        assert_eq!(p.frames, s.frames);
        assert_eq!(p.steady_state_period_ms, s.steady_state_period_ms);
    }

    #[test]
    fn slow_link_sets_the_period() {
        let mut a = StageCost::new("a", 1.0, 1);
        a.transfer_out_bytes = 125_000;
        let stages = [a, StageCost::new("b", 1.0, 1)];
        let dev = DeviceSpec { link_bandwidth_bytes_per_s: 12.5e6, link_latency_s: 0.0, ..DeviceSpec::gap9() };
        let r = simulate_pipelined(&stages, &dev, 5).unwrap();
        assert!((r.steady_state_period_ms - 10.0).abs() < 1e-9);
        assert_eq!(r.bottleneck, "link:a->b");
        assert!((r.frames[0].latency_ms - 12.0).abs() < 1e-9);
        assert!((r.frames[4].finish_ms - r.frames[3].finish_ms - 10.0).abs() < 1e-9);
    }

    #[test]
    fn load_cost_adds_to_sequential_latency() {
        let mut a = StageCost::new("a", 2.0, 1);
        a.weight_bytes = 1_000_000;
        let dev = DeviceSpec { load_bandwidth_bytes_per_s: 1e8, ..DeviceSpec::gap9() };
        let r = simulate_sequential(&[a], &dev, 1).unwrap();
        assert!((r.frames[0].latency_ms - 12.0).abs() < 1e-9);
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(simulate_sequential(&[StageCost::new("a", 1.0, 1)], &free_links(), 0).is_err());
        assert!(simulate_pipelined(&[StageCost::new("a", 1.0, 1)], &free_links(), 0).is_err());
    }

    #[test]
    fn stage_cost_file() {
        let s = parse_stage_costs(r#"[{"name": "a", "compute_ms": 1.5}]"#).unwrap();
        assert_eq!(s[0].passes, 1);
        let err = parse_stage_costs(r#"[{"name": "a", "compute_ms": "x"}]"#).unwrap_err();
        assert!(err.to_string().contains("compute_ms"), "{err}");
        assert!(parse_stage_costs(r#"[{"name": "a", "compute_ms": 1, "passes": 0}]"#).is_err());
        assert!(parse_stage_costs("[]").is_err());
    }

    #[test]
    fn noiseless_jitter_is_deterministic_total() {
        let stages = [StageCost::new("a", 1.25, 2), StageCost::new("b", 3.0, 1)];
        let runs = jitter_model(&stages, &[0.0, 0.0], 1, 10).unwrap();
        assert!(runs.iter().all(|&r| r == 5.5));
        let a = jitter_model(&stages, &[0.1, 0.2], 42, 50).unwrap();
        assert_eq!(a, jitter_model(&stages, &[0.1, 0.2], 42, 50).unwrap());
    }
}
