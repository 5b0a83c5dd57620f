//! Shipped reference data and the built-in toy detector graph.
//!
//! The toy graph is a 4-channel (RGB-D style) encoder/decoder followed by a
//! point-feature stage and a small refinement head. It has the structure of
//! a two-stage grasp detector, not its real sizes; published measurements
//! are carried separately in [`Published`] and never mixed with computed
//! values.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphInput, LayerKind, LayerNode, Weights};
use crate::memory::DeviceSpec;
use crate::partition::{PartitionPlan, PlanFile};
use crate::pipeline::{parse_stage_costs, StageCost};

pub const GAP9_JSON: &str = include_str!("../fixtures/gap9.json");
pub const TABLE2_JSON: &str = include_str!("../fixtures/table2.json");
pub const PUBLISHED_JSON: &str = include_str!("../fixtures/published.json");
pub const TOY_PLAN_JSON: &str = include_str!("../fixtures/toy_hggd_plan.json");

/// Names of the four stages of the reference deployment.
pub const STAGE_NAMES: [&str; 4] = ["ResNet-MCU", "AnchorNet-MCU", "PointNet-MCU", "LocalNet-MCU"];

/// Node-id prefix per stage of the toy graph.
const STAGE_PREFIX: [&str; 4] = ["e", "a", "p", "l"];

pub fn gap9() -> DeviceSpec {
    DeviceSpec::from_json(GAP9_JSON).expect("shipped device preset is valid")
}

pub fn table2() -> Vec<StageCost> {
    parse_stage_costs(TABLE2_JSON).expect("shipped stage costs are valid")
}

pub fn published() -> Published {
    serde_json::from_str(PUBLISHED_JSON).expect("shipped measurements are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryFigure {
    /// `flash`, `l2` or `ram`.
    pub memory: String,
    pub model: String,
    pub original: Option<u64>,
    pub optimised: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageLatency {
    pub model: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Published {
    pub provenance: String,
    pub clock_hz: f64,
    pub memory: Vec<MemoryFigure>,
    pub latency_ms: Vec<StageLatency>,
    pub total_ms: f64,
    pub total_pm_ms: f64,
    pub pointnet_passes: u32,
    pub bootstrap_resample_size: usize,
    pub bootstrap_reps: usize,
    pub shapiro_wilk_p: f64,
}

impl Published {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("published.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: format!("{}: {}", path.display(), e.path()),
            message: e.inner().to_string(),
        })
    }

    /// Every byte value present in the memory figures.
    pub fn memory_values(&self) -> Vec<u64> {
        self.memory.iter().flat_map(|m| m.original.into_iter().chain(m.optimised)).collect()
    }
}

struct Builder {
    rng: ChaCha8Rng,
    nodes: Vec<LayerNode>,
    counters: BTreeMap<&'static str, usize>,
    channels: BTreeMap<String, usize>,
}

impl Builder {
    fn id(&mut self, stage: &'static str, name: &str) -> String {
        let n = self.counters.entry(stage).or_insert(0);
        *n += 1;
        format!("{stage}{:02}_{name}", *n)
    }

    fn weights(&mut self, fan_in: usize, len: usize, out: usize) -> Weights {
        let bound = (3.0 / fan_in as f32).sqrt();
        let kernel = (0..len).map(|_| self.rng.random_range(-bound..bound)).collect();
        let bias = (0..out).map(|_| self.rng.random_range(-0.05f32..0.05)).collect();
        Weights::new(kernel, Some(bias))
    }

    fn push(
        &mut self,
        stage: &'static str,
        name: &str,
        kind: LayerKind,
        inputs: &[&str],
        out_channels: usize,
    ) -> String {
        let id = self.id(stage, name);
        let weights = match kind {
            LayerKind::Conv2d { k_h, k_w, out_channels, .. } => {
                let cin = self.channels[inputs[0]];
                Some(self.weights(k_h * k_w * cin, out_channels * k_h * k_w * cin, out_channels))
            }
            LayerKind::Dense { out_features } => {
                let cin = self.channels[inputs[0]];
                Some(self.weights(cin, out_features * cin, out_features))
            }
            _ => None,
        };
        let mut node = LayerNode::new(id.clone(), kind, inputs.iter().map(|s| s.to_string()).collect(), id.clone());
        node.weights = weights;
        self.nodes.push(node);
        self.channels.insert(id.clone(), out_channels);
        id
    }

    fn conv(&mut self, stage: &'static str, name: &str, input: &str, k: usize, stride: usize, out: usize) -> String {
        let kind = LayerKind::Conv2d { k_h: k, k_w: k, stride, pad: k / 2, out_channels: out };
        self.push(stage, name, kind, &[input], out)
    }

    fn dense(&mut self, stage: &'static str, name: &str, input: &str, out: usize) -> String {
        self.push(stage, name, LayerKind::Dense { out_features: out }, &[input], out)
    }

    fn unary(&mut self, stage: &'static str, name: &str, kind: LayerKind, input: &str) -> String {
        let c = self.channels[input];
        self.push(stage, name, kind, &[input], c)
    }

    fn relu(&mut self, stage: &'static str, input: &str) -> String {
        self.unary(stage, "relu", LayerKind::Relu, input)
    }

    fn add(&mut self, stage: &'static str, a: &str, b: &str) -> String {
        let c = self.channels[a];
        self.push(stage, "add", LayerKind::Add, &[a, b], c)
    }

    fn concat(&mut self, stage: &'static str, a: &str, b: &str) -> String {
        let c = self.channels[a] + self.channels[b];
        self.push(stage, "concat", LayerKind::Concat { axis: 2 }, &[a, b], c)
    }

    fn down_block(&mut self, input: &str, out: usize) -> String {
        let c1 = self.conv("e", "conv", input, 3, 2, out);
        let r1 = self.relu("e", &c1);
        let c2 = self.conv("e", "conv", &r1, 3, 1, out);
        let skip = self.conv("e", "skip", input, 1, 2, out);
        let sum = self.add("e", &c2, &skip);
        self.relu("e", &sum)
    }
}

/// The built-in toy detector: 37 nodes, one 4-channel spatial input named
/// `rgbd`, outputs `a07_anchor` and `l03_dense`. Weights are drawn from
/// `seed`.
pub fn toy_hggd(seed: u64) -> Graph {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
        counters: BTreeMap::new(),
        channels: BTreeMap::from([("rgbd".to_string(), 4)]),
    };

    // encoder
    let stem = b.conv("e", "stem", "rgbd", 7, 2, 16);
    let stem = b.relu("e", &stem);
    let e1 = b.unary("e", "maxpool", LayerKind::MaxPool { k: 2, stride: 2 }, &stem);
    let c1 = b.conv("e", "conv", &e1, 3, 1, 16);
    let r1 = b.relu("e", &c1);
    let c2 = b.conv("e", "conv", &r1, 3, 1, 16);
    let sum = b.add("e", &c2, &e1);
    let e1 = b.relu("e", &sum);
    let e2 = b.down_block(&e1, 32);
    let e3 = b.down_block(&e2, 64);

    // anchor decoder
    let lateral = b.conv("a", "lateral", &e2, 3, 2, 32);
    let fused = b.concat("a", &e3, &lateral);
    let d = b.conv("a", "conv", &fused, 3, 1, 32);
    let d = b.relu("a", &d);
    let up = b.unary("a", "upsample", LayerKind::UpsampleNearest { factor: 2 }, &d);
    let heat = b.conv("a", "heatmap", &up, 1, 1, 1);
    let anchor = b.conv("a", "anchor", &up, 1, 1, 6);

    // point features
    let pf = b.unary("p", "maxpool", LayerKind::MaxPool { k: 2, stride: 2 }, &up);
    let ph = b.unary("p", "maxpool", LayerKind::MaxPool { k: 2, stride: 2 }, &heat);
    let p = b.concat("p", &pf, &ph);
    let p = b.dense("p", "dense", &p, 64);
    let p = b.relu("p", &p);
    let p = b.dense("p", "dense", &p, 64);
    let p = b.relu("p", &p);

    // refinement head
    let l = b.dense("l", "dense", &p, 32);
    let l = b.relu("l", &l);
    let out = b.dense("l", "dense", &l, 8);

    Graph::new(vec![GraphInput::spatial("rgbd", 4)], b.nodes, vec![anchor, out]).expect("toy graph is valid")
}

/// The four-stage plan over [`toy_hggd`], one stage per node-id prefix.
pub fn toy_hggd_plan_file(g: &Graph) -> PlanFile {
    let stages = STAGE_NAMES
        .iter()
        .zip(STAGE_PREFIX)
        .map(|(name, prefix)| crate::partition::PlanStage {
            name: name.to_string(),
            nodes: crate::graph::topo_order(g).into_iter().filter(|id| id.starts_with(prefix)).collect(),
        })
        .collect();
    PlanFile { stages, transfers: None }
}

/// [`toy_hggd_plan_file`] applied to a shaped toy graph.
pub fn toy_hggd_plan(shaped: &Graph) -> Result<PartitionPlan> {
    PartitionPlan::from_file(shaped, &toy_hggd_plan_file(shaped))
}
