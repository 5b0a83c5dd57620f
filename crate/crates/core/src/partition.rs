//! Splitting a graph into sequential stages at tensor frontiers.
//!
//! A frontier is the set of tensors produced on one side of a cut and
//! consumed on the other. Stages are executed in order; a tensor produced in
//! stage `i` and consumed in stage `j > i + 1` is carried across every
//! boundary in between. Graph inputs are available to every stage and are
//! never counted as transfers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{compare_outputs, exec_float, Activation};
use crate::graph::{infer_shapes, topo_order, DType, Graph, Layout, Resolution, TensorSpec};
use crate::memory::{peak_activation, place, weight_footprint, DeviceSpec};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CutPoint {
    pub tensors: BTreeSet<String>,
}

impl CutPoint {
    pub fn new<I, S>(tensors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { tensors: tensors.into_iter().map(Into::into).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    /// Node ids in execution order.
    pub nodes: Vec<String>,
    pub graph: Graph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    source: Graph,
    stages: Vec<Stage>,
    transfers: Vec<Vec<TensorSpec>>,
}

/// Default stage names: `stage0`, `stage1`, ...
pub fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("stage{i}")).collect()
}

impl PartitionPlan {
    /// Builds a plan from explicit node-id sets, one per stage.
    pub fn from_node_sets(g: &Graph, names: Vec<String>, sets: Vec<Vec<String>>) -> Result<Self> {
        if !g.is_shaped() {
            return Err(Error::ShapesNotInferred);
        }
        if names.len() != sets.len() {
            return Err(Error::InvalidArgument(format!("{} stage names for {} stages", names.len(), sets.len())));
        }
        if sets.is_empty() {
            return Err(Error::InvalidFrontier("a plan needs at least one stage".into()));
        }
        let index: HashMap<&str, usize> = g.nodes().iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut stage_of = vec![usize::MAX; g.nodes().len()];
        for (s, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidFrontier(format!("stage `{}` is empty", names[s])));
            }
            for id in set {
                let &i =
                    index.get(id.as_str()).ok_or_else(|| Error::InvalidFrontier(format!("unknown node `{id}`")))?;
                if stage_of[i] != usize::MAX {
                    return Err(Error::InvalidFrontier(format!("node `{id}` assigned to more than one stage")));
                }
                stage_of[i] = s;
            }
        }
        if let Some(i) = stage_of.iter().position(|&s| s == usize::MAX) {
            return Err(Error::InvalidFrontier(format!("node `{}` not assigned to any stage", g.nodes()[i].id)));
        }
        Self::build(g, names, &stage_of)
    }

    /// Splits at `cuts` in order. Each cut's prefix is the ancestor closure
    /// of its tensors' producers, and its crossing set must equal the cut.
    pub fn split_at(g: &Graph, cuts: &[CutPoint], names: Vec<String>) -> Result<Self> {
        if !g.is_shaped() {
            return Err(Error::ShapesNotInferred);
        }
        let producers = g.producers();
        let mut stage_of = vec![usize::MAX; g.nodes().len()];
        let mut prefix: HashSet<usize> = HashSet::new();
        for (c, cut) in cuts.iter().enumerate() {
            if cut.tensors.is_empty() {
                return Err(Error::InvalidFrontier(format!("cut {c} is empty")));
            }
            let mut stack = Vec::new();
            for t in &cut.tensors {
                match producers.get(t.as_str()) {
                    Some(&p) => stack.push(p),
                    None => return Err(Error::InvalidFrontier(format!("cut {c}: `{t}` is not produced by any node"))),
                }
            }
            let mut closure: HashSet<usize> = HashSet::new();
            while let Some(i) = stack.pop() {
                if closure.insert(i) {
                    stack.extend(g.nodes()[i].inputs.iter().filter_map(|t| producers.get(t.as_str()).copied()));
                }
            }
            if !prefix.is_subset(&closure) {
                return Err(Error::InvalidFrontier(format!("cut {c} does not extend the previous cut")));
            }
            if closure.len() == g.nodes().len() {
                return Err(Error::InvalidFrontier(format!("cut {c} leaves no nodes after it")));
            }
            let crossing = crossing_set(g, &closure);
            if crossing != cut.tensors {
                let extra: Vec<_> = cut.tensors.difference(&crossing).collect();
                let missing: Vec<_> = crossing.difference(&cut.tensors).collect();
                return Err(Error::InvalidFrontier(format!(
                    "cut {c}: tensors {extra:?} do not cross it, tensors {missing:?} cross it but are not listed"
                )));
            }
            for &i in &closure {
                if stage_of[i] == usize::MAX {
                    stage_of[i] = c;
                }
            }
            prefix = closure;
        }
        for s in stage_of.iter_mut().filter(|s| **s == usize::MAX) {
            *s = cuts.len();
        }
        if names.len() != cuts.len() + 1 {
            return Err(Error::InvalidArgument(format!("{} stage names for {} stages", names.len(), cuts.len() + 1)));
        }
        if (0..=cuts.len()).any(|s| !stage_of.contains(&s)) {
            return Err(Error::InvalidFrontier("two cuts coincide".into()));
        }
        Self::build(g, names, &stage_of)
    }

    /// Cuts the deterministic topological order at the given positions
    /// (strictly increasing, each in `1..n`).
    pub fn from_topo_cuts(g: &Graph, cuts: &[usize], names: Vec<String>) -> Result<Self> {
        let order = topo_order(g);
        if cuts.windows(2).any(|w| w[0] >= w[1]) || cuts.iter().any(|&c| c == 0 || c >= order.len()) {
            return Err(Error::InvalidFrontier(format!("cut positions {cuts:?} invalid for {} nodes", order.len())));
        }
        let bounds: Vec<usize> = std::iter::once(0).chain(cuts.iter().copied()).chain([order.len()]).collect();
        let sets = bounds.windows(2).map(|w| order[w[0]..w[1]].to_vec()).collect();
        Self::from_node_sets(g, names, sets)
    }

    fn build(g: &Graph, names: Vec<String>, stage_of: &[usize]) -> Result<Self> {
        let k = names.len();
        let producers = g.producers();
        let consumers = g.consumers();
        for (i, n) in g.nodes().iter().enumerate() {
            for t in &n.inputs {
                if let Some(&p) = producers.get(t.as_str()) {
                    if stage_of[p] > stage_of[i] {
                        return Err(Error::InvalidFrontier(format!(
                            "`{t}` flows from stage `{}` back to stage `{}` (node `{}`)",
                            names[stage_of[p]], names[stage_of[i]], n.id
                        )));
                    }
                }
            }
        }
        let graph_outputs: HashSet<&str> = g.outputs().iter().map(String::as_str).collect();
        let order = g.topo_indices()?;
        let mut stages = Vec::with_capacity(k);
        for (s, name) in names.into_iter().enumerate() {
            let members: Vec<usize> = order.iter().copied().filter(|&i| stage_of[i] == s).collect();
            let produced: HashSet<&str> = members.iter().map(|&i| g.nodes()[i].output.as_str()).collect();
            let inputs: Vec<String> = members
                .iter()
                .flat_map(|&i| g.nodes()[i].inputs.iter())
                .filter(|t| !produced.contains(t.as_str()))
                .map(String::clone)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let outputs: Vec<String> = members
                .iter()
                .map(|&i| g.nodes()[i].output.as_str())
                .filter(|t| {
                    let later = consumers.get(t).is_none_or(|cs| cs.iter().any(|&c| stage_of[c] > s));
                    let unused = !consumers.contains_key(t);
                    graph_outputs.contains(t) || later || unused
                })
                .map(str::to_string)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let graph = g.subgraph(&members, &inputs, outputs)?;
            let nodes = members.iter().map(|&i| g.nodes()[i].id.clone()).collect();
            stages.push(Stage { name, nodes, graph });
        }
        let transfers = (0..k.saturating_sub(1))
            .map(|b| {
                let prefix: HashSet<usize> = (0..stage_of.len()).filter(|&i| stage_of[i] <= b).collect();
                crossing_set(g, &prefix).into_iter().map(|t| g.tensor(&t).cloned()).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { source: g.clone(), stages, transfers })
    }

    pub fn source(&self) -> &Graph {
        &self.source
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Mutable stage access, for fault injection in tests.
    pub fn stages_mut(&mut self) -> &mut [Stage] {
        &mut self.stages
    }

    /// Tensors crossing each of the `k - 1` boundaries, sorted by name.
    pub fn transfers(&self) -> &[Vec<TensorSpec>] {
        &self.transfers
    }

    pub fn transfer_bytes(&self) -> u64 {
        self.transfers.iter().flatten().map(TensorSpec::byte_size).sum()
    }

    /// Bytes leaving each stage (zero for the last).
    pub fn transfer_out_bytes(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.transfers.iter().map(|b| b.iter().map(TensorSpec::byte_size).sum()).collect();
        out.push(0);
        out
    }

    pub fn cuts(&self) -> Vec<CutPoint> {
        self.transfers.iter().map(|b| CutPoint::new(b.iter().map(|t| t.name.clone()))).collect()
    }

    /// The same node sets over the source graph re-shaped at `res`, with
    /// storage counted at `dtype`.
    pub fn rebind(&self, res: Resolution, dtype: DType) -> Result<Self> {
        let g = infer_shapes(&self.source, res)?.with_storage_dtype(dtype);
        let names = self.stages.iter().map(|s| s.name.clone()).collect();
        let sets = self.stages.iter().map(|s| s.nodes.clone()).collect();
        Self::from_node_sets(&g, names, sets)
    }

    /// Reassembles the stages into a single graph.
    pub fn concatenate(&self) -> Result<Graph> {
        let index: HashMap<&str, usize> =
            self.source.nodes().iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut nodes = Vec::new();
        for stage in &self.stages {
            for id in &stage.nodes {
                let node =
                    stage.graph.node(id).cloned().unwrap_or_else(|| self.source.nodes()[index[id.as_str()]].clone());
                nodes.push(node);
            }
        }
        Graph::new(self.source.inputs().to_vec(), nodes, self.source.outputs().to_vec())
    }

    pub fn to_file(&self) -> PlanFile {
        PlanFile {
            stages: self.stages.iter().map(|s| PlanStage { name: s.name.clone(), nodes: s.nodes.clone() }).collect(),
            transfers: Some(self.transfers.iter().map(|b| b.iter().map(|t| t.name.clone()).collect()).collect()),
        }
    }

    pub fn from_file(g: &Graph, file: &PlanFile) -> Result<Self> {
        let names = file.stages.iter().map(|s| s.name.clone()).collect();
        let sets = file.stages.iter().map(|s| s.nodes.clone()).collect();
        let plan = Self::from_node_sets(g, names, sets)?;
        if let Some(declared) = &file.transfers {
            let computed: Vec<Vec<String>> =
                plan.transfers.iter().map(|b| b.iter().map(|t| t.name.clone()).collect()).collect();
            let declared: Vec<Vec<String>> =
                declared.iter().map(|b| b.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()).collect();
            if declared != computed {
                return Err(Error::InvalidFrontier(format!(
                    "declared transfers {declared:?} do not match the stage split {computed:?}"
                )));
            }
        }
        Ok(plan)
    }
}

/// Tensors produced inside `prefix` and consumed outside it.
fn crossing_set(g: &Graph, prefix: &HashSet<usize>) -> BTreeSet<String> {
    let producers = g.producers();
    let mut out = BTreeSet::new();
    for (i, n) in g.nodes().iter().enumerate() {
        if prefix.contains(&i) {
            continue;
        }
        for t in &n.inputs {
            if let Some(p) = producers.get(t.as_str()) {
                if prefix.contains(p) {
                    out.insert(t.clone());
                }
            }
        }
    }
    out
}

/// Plan file: stage names with node-id sets, plus the transfer tensor names
/// at each boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub stages: Vec<PlanStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfers: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStage {
    pub name: String,
    pub nodes: Vec<String>,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Parse { path: e.path().to_string(), message: e.inner().to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Lexicographic search objective; smaller is better.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Objective {
    /// Largest per-stage working set plus weight payload.
    pub max_stage_bytes: u64,
    pub transfer_bytes: u64,
    pub cuts: Vec<usize>,
}

/// Working set and weight bytes of the stage spanning topo positions
/// `start..end`, or `None` if it does not fit the device.
fn segment_cost(g: &Graph, order: &[usize], start: usize, end: usize, dev: &DeviceSpec) -> Result<Option<u64>> {
    let members: Vec<usize> = order[start..end].to_vec();
    let member_set: HashSet<usize> = members.iter().copied().collect();
    let produced: HashSet<&str> = members.iter().map(|&i| g.nodes()[i].output.as_str()).collect();
    let inputs: Vec<String> = members
        .iter()
        .flat_map(|&i| g.nodes()[i].inputs.iter())
        .filter(|t| !produced.contains(t.as_str()))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // any output works for costing; liveness keeps every unconsumed tensor
    // to the end regardless
    let consumers = g.consumers();
    let graph_outputs: HashSet<&str> = g.outputs().iter().map(String::as_str).collect();
    let outputs: Vec<String> = members
        .iter()
        .map(|&i| g.nodes()[i].output.as_str())
        .filter(|t| {
            graph_outputs.contains(t) || consumers.get(t).is_none_or(|cs| cs.iter().any(|c| !member_set.contains(c)))
        })
        .map(str::to_string)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sub = g.subgraph(&members, &inputs, outputs)?;
    let working = peak_activation(&sub, &topo_order(&sub))?;
    if place(working, dev).is_err() {
        return Ok(None);
    }
    Ok(Some(working + weight_footprint(&sub).total()))
}

/// Exhaustive search over `k - 1` cut positions in the topological order.
pub fn auto_cuts(g: &Graph, dev: &DeviceSpec, k: usize) -> Result<PartitionPlan> {
    auto_cuts_named(g, dev, default_names(k))
}

pub fn auto_cuts_named(g: &Graph, dev: &DeviceSpec, names: Vec<String>) -> Result<PartitionPlan> {
    let k = names.len();
    let (cuts, _) = search(g, dev, k)?;
    PartitionPlan::from_topo_cuts(g, &cuts, names)
}

/// Best cut positions and their objective.
pub fn search(g: &Graph, dev: &DeviceSpec, k: usize) -> Result<(Vec<usize>, Objective)> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("stage count must be at least 2, got {k}")));
    }
    if !g.is_shaped() {
        return Err(Error::ShapesNotInferred);
    }
    let n = g.nodes().len();
    if n < k {
        return Err(Error::NoFeasiblePartition(format!("{n} nodes cannot form {k} stages")));
    }
    let order = g.topo_indices()?;
    let mut cost: HashMap<(usize, usize), Option<u64>> = HashMap::new();
    for start in 0..n {
        for end in start + 1..=n {
            cost.insert((start, end), segment_cost(g, &order, start, end, dev)?);
        }
    }
    let crossing: Vec<u64> = (0..=n)
        .map(|p| {
            let prefix: HashSet<usize> = order[..p].iter().copied().collect();
            crossing_set(g, &prefix).iter().map(|t| g.tensors().map(|m| m[t].byte_size()).unwrap_or(0)).sum()
        })
        .collect();
    let mut best: Option<Objective> = None;
    for cuts in (1..n).combinations(k - 1) {
        let bounds: Vec<usize> = std::iter::once(0).chain(cuts.iter().copied()).chain([n]).collect();
        let Some(max_stage_bytes) =
            bounds.windows(2).map(|w| cost[&(w[0], w[1])]).try_fold(0u64, |m, c| c.map(|c| m.max(c)))
        else {
            continue;
        };
        let obj = Objective { max_stage_bytes, transfer_bytes: cuts.iter().map(|&c| crossing[c]).sum(), cuts };
        if best.as_ref().is_none_or(|b| obj < *b) {
            best = Some(obj);
        }
    }
    let best = best.ok_or_else(|| {
        Error::NoFeasiblePartition(format!(
            "no {k}-stage split keeps every working set within {} bytes of RAM",
            dev.ram_bytes
        ))
    })?;
    Ok((best.cuts.clone(), best))
}

/// Runs the stages in order, feeding each from everything produced so far.
pub fn run_staged(plan: &PartitionPlan, inputs: &BTreeMap<String, Activation>) -> Result<BTreeMap<String, Activation>> {
    let mut env = inputs.clone();
    for stage in &plan.stages {
        let feed: BTreeMap<String, Activation> = stage
            .graph
            .inputs()
            .iter()
            .map(|i| {
                env.get(&i.name)
                    .cloned()
                    .map(|a| (i.name.clone(), a))
                    .ok_or_else(|| Error::MissingInput(i.name.clone()))
            })
            .collect::<Result<_>>()?;
        env.extend(exec_float(&stage.graph, &feed)?);
    }
    plan.source
        .outputs()
        .iter()
        .map(|o| env.remove(o).map(|a| (o.clone(), a)).ok_or_else(|| Error::MissingInput(o.clone())))
        .collect()
}

/// Uniform `[-1, 1)` values for every graph input, in the input's declared
/// layout.
pub fn random_inputs(g: &Graph, rng: &mut impl Rng) -> Result<BTreeMap<String, Activation>> {
    g.inputs()
        .iter()
        .map(|input| {
            let spec = g.tensor(&input.name)?;
            let data: Vec<f32> = (0..spec.numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let hwc = Activation::new(spec.clone(), data)?;
            let act = if input.layout == Layout::Chw {
                let (spec, data) = crate::graph::convert_layout(&hwc.spec, &hwc.data, Layout::Chw)?;
                Activation { spec, data }
            } else {
                hwc
            };
            Ok((input.name.clone(), act))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub bitwise_equal: bool,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub seed: u64,
    pub trials: Vec<TrialResult>,
}

impl EquivalenceReport {
    pub fn all_equal(&self) -> bool {
        self.trials.iter().all(|t| t.bitwise_equal)
    }
}

/// Compares staged against monolithic float execution on seeded random
/// inputs. Mismatches (and execution failures) are reported, not raised.
pub fn verify_plan(g: &Graph, plan: &PartitionPlan, trials: u64, seed: u64) -> EquivalenceReport {
    let trials = (0..trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let outcome = (|| -> Result<(bool, f64)> {
                let inputs = random_inputs(g, &mut rng)?;
                let whole = exec_float(g, &inputs)?;
                let staged = run_staged(plan, &inputs)?;
                let mut equal = true;
                let mut max_abs = 0.0f64;
                for (name, a) in &whole {
                    let b = staged.get(name).ok_or_else(|| Error::MissingInput(name.clone()))?;
                    let c = compare_outputs(a, b)?;
                    equal &= c.bitwise_equal;
                    max_abs = max_abs.max(c.max_abs);
                }
                Ok((equal, max_abs))
            })();
            let (bitwise_equal, max_abs) = outcome.unwrap_or((false, f64::INFINITY));
            TrialResult { trial, bitwise_equal, max_abs }
        })
        .collect();
    EquivalenceReport { seed, trials }
}
