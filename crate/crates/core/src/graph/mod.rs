//! Graph intermediate representation.
//!
//! A [`Graph`] is a DAG of typed layers connected by named tensors. Every
//! tensor is produced exactly once (by a node, or as a graph input) and the
//! canonical activation layout is HWC. Height and width of spatial graph
//! inputs are left open until [`infer_shapes`] binds a [`Resolution`].

mod layout;
mod model_file;
mod shape;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::QuantParams;

pub use layout::convert_layout;
pub use model_file::{load_graph, load_graph_with, load_model, save_model, WeightRef};
pub use shape::infer_shapes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Int8,
    Int32,
}

impl DType {
    /// Bytes per element.
    pub const fn width(self) -> usize {
        match self {
            DType::Float32 | DType::Int32 => 4,
            DType::Int8 => 1,
        }
    }

    pub const fn code(self) -> u8 {
        match self {
            DType::Float32 => 0,
            DType::Int8 => 1,
            DType::Int32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Float32),
            1 => Some(DType::Int8),
            2 => Some(DType::Int32),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::Float32 => "float32",
            DType::Int8 => "int8",
            DType::Int32 => "int32",
        })
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float32" => Ok(DType::Float32),
            "int8" => Ok(DType::Int8),
            "int32" => Ok(DType::Int32),
            other => Err(Error::InvalidArgument(format!("unknown dtype `{other}`"))),
        }
    }
}

/// Element ordering of a tensor buffer. Dims of a [`TensorSpec`] are listed
/// in layout order: `[H, W, C]` for HWC, `[C, H, W]` for CHW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    #[serde(rename = "HWC")]
    Hwc,
    #[serde(rename = "CHW")]
    Chw,
    #[serde(rename = "flat")]
    Flat,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub layout: Layout,
    pub dtype: DType,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, layout: Layout, dtype: DType) -> Result<Self> {
        let name = name.into();
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::InvalidGraph(format!("tensor `{name}` has rank {} (expected 1..=4)", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGraph(format!("tensor `{name}` has a zero extent: {dims:?}")));
        }
        if matches!(layout, Layout::Hwc | Layout::Chw) && dims.len() != 3 {
            return Err(Error::InvalidGraph(format!("tensor `{name}` is {layout:?} but has rank {}", dims.len())));
        }
        Ok(Self { name, dims, layout, dtype })
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn byte_size(&self) -> u64 {
        (self.numel() * self.dtype.width()) as u64
    }

    /// `(height, width, channels)` for a rank-3 spatial tensor.
    pub fn hwc(&self) -> Option<(usize, usize, usize)> {
        match (self.layout, self.dims.as_slice()) {
            (Layout::Hwc, &[h, w, c]) => Some((h, w, c)),
            (Layout::Chw, &[c, h, w]) => Some((h, w, c)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// Parses the command-line form `WxH`.
    pub fn parse_wxh(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("input resolution `{s}` is not of the form WxH"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("input resolution `{s}` must be positive")));
        }
        Ok(Self { height, width })
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        k_h: usize,
        k_w: usize,
        stride: usize,
        pad: usize,
        out_channels: usize,
    },
    /// Fully connected over the innermost axis; leading axes are kept.
    Dense {
        out_features: usize,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    UpsampleNearest {
        factor: usize,
    },
    Add,
    Concat {
        axis: usize,
    },
    Identity,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::UpsampleNearest { .. } => "upsample_nearest",
            LayerKind::Add => "add",
            LayerKind::Concat { .. } => "concat",
            LayerKind::Identity => "identity",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }

    fn check_params(&self) -> std::result::Result<(), String> {
        let positive = |what: &str, v: usize| if v == 0 { Err(format!("{what} must be ≥ 1")) } else { Ok(()) };
        match *self {
            LayerKind::Conv2d { k_h, k_w, stride, out_channels, .. } => {
                positive("k_h", k_h)?;
                positive("k_w", k_w)?;
                positive("stride", stride)?;
                positive("out_channels", out_channels)
            }
            LayerKind::Dense { out_features } => positive("out_features", out_features),
            LayerKind::MaxPool { k, stride } | LayerKind::AvgPool { k, stride } => {
                positive("k", k)?;
                positive("stride", stride)
            }
            LayerKind::UpsampleNearest { factor } => positive("factor", factor),
            _ => Ok(()),
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            LayerKind::Add | LayerKind::Concat { .. } => n >= 2,
            _ => n == 1,
        }
    }
}

/// Float32 weight payload. Conv kernels are stored `[out, k_h, k_w, in]`,
/// dense kernels `[out, in]`.
///
/// Payloads are reference counted so sub-graphs share the original buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub kernel: Arc<[f32]>,
    pub bias: Option<Arc<[f32]>>,
}

impl Weights {
    pub fn new(kernel: Vec<f32>, bias: Option<Vec<f32>>) -> Self {
        Self { kernel: kernel.into(), bias: bias.map(Into::into) }
    }
}

/// Int8 weight payload produced by the quantiser. Bias is stored as int32 at
/// scale `s_in * s_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantWeights {
    pub kernel: Arc<[i8]>,
    pub kernel_params: QuantParams,
    pub bias: Option<Arc<[i32]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub output: String,
    pub weights: Option<Weights>,
    pub quant: Option<QuantWeights>,
}

impl LayerNode {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: Vec<String>, output: impl Into<String>) -> Self {
        Self { id: id.into(), kind, inputs, output: output.into(), weights: None, quant: None }
    }

    pub fn with_weights(mut self, weights: Weights) -> Self {
        self.weights = Some(weights);
        self
    }
}

/// Shape of a graph input before resolution binding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InputShape {
    /// Spatial input whose height and width follow the bound resolution.
    Spatial { channels: usize },
    /// Fully specified dims in canonical order (`[H, W, C]` or `[N]`).
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphInput {
    pub name: String,
    /// Layout callers supply data in. Execution converts to HWC.
    pub layout: Layout,
    pub shape: InputShape,
}

impl GraphInput {
    pub fn spatial(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), layout: Layout::Hwc, shape: InputShape::Spatial { channels } }
    }

    pub fn fixed(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let layout = if dims.len() == 3 { Layout::Hwc } else { Layout::Flat };
        Self { name: name.into(), layout, shape: InputShape::Fixed(dims) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    inputs: Vec<GraphInput>,
    nodes: Vec<LayerNode>,
    outputs: Vec<String>,
    dtype: DType,
    shapes: Option<BTreeMap<String, TensorSpec>>,
    resolution: Option<Resolution>,
    act_params: BTreeMap<String, QuantParams>,
}

impl Graph {
    /// Builds and validates a float32 graph.
    pub fn new(inputs: Vec<GraphInput>, nodes: Vec<LayerNode>, outputs: Vec<String>) -> Result<Self> {
        let g = Self {
            inputs,
            nodes,
            outputs,
            dtype: DType::Float32,
            shapes: None,
            resolution: None,
            act_params: BTreeMap::new(),
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate node id `{}`", n.id)));
            }
            n.kind.check_params().map_err(|m| Error::InvalidGraph(format!("node `{}`: {m}", n.id)))?;
            if !n.kind.arity_ok(n.inputs.len()) {
                return Err(Error::InvalidGraph(format!(
                    "node `{}` ({}) has {} inputs",
                    n.id,
                    n.kind.name(),
                    n.inputs.len()
                )));
            }
            match (n.kind.is_weighted(), n.weights.is_some()) {
                (true, false) => {
                    return Err(Error::InvalidGraph(format!("node `{}` ({}) carries no weights", n.id, n.kind.name())))
                }
                (false, true) => {
                    return Err(Error::InvalidGraph(format!(
                        "node `{}` ({}) must not carry weights",
                        n.id,
                        n.kind.name()
                    )))
                }
                _ => {}
            }
        }

        let mut produced: HashSet<&str> = HashSet::new();
        for i in &self.inputs {
            if let InputShape::Spatial { channels: 0 } = i.shape {
                return Err(Error::InvalidGraph(format!("input `{}` has zero channels", i.name)));
            }
            if !produced.insert(&i.name) {
                return Err(Error::InvalidGraph(format!("tensor `{}` declared twice", i.name)));
            }
        }
        for n in &self.nodes {
            if !produced.insert(&n.output) {
                return Err(Error::InvalidGraph(format!("tensor `{}` is produced more than once", n.output)));
            }
        }
        for n in &self.nodes {
            for t in &n.inputs {
                if !produced.contains(t.as_str()) {
                    return Err(Error::DanglingTensor { tensor: t.clone(), node: n.id.clone() });
                }
            }
        }
        for o in &self.outputs {
            if !produced.contains(o.as_str()) {
                return Err(Error::InvalidGraph(format!("graph output `{o}` is never produced")));
            }
        }
        if self.outputs.is_empty() {
            return Err(Error::InvalidGraph("graph declares no outputs".into()));
        }
        self.topo_indices().map(|_| ())
    }

    pub fn inputs(&self) -> &[GraphInput] {
        &self.inputs
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn resolution(&self) -> Option<Resolution> {
        self.resolution
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Mutable access to a node's payloads, e.g. for fault injection. The
    /// node structure (kind, wiring) is not exposed for mutation.
    pub fn node_weights_mut(&mut self, id: &str) -> Option<(&mut Option<Weights>, &mut Option<QuantWeights>)> {
        self.nodes.iter_mut().find(|n| n.id == id).map(|n| (&mut n.weights, &mut n.quant))
    }

    pub fn is_shaped(&self) -> bool {
        self.shapes.is_some()
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorSpec> {
        let shapes = self.shapes.as_ref().ok_or(Error::ShapesNotInferred)?;
        shapes.get(name).ok_or_else(|| Error::InvalidGraph(format!("unknown tensor `{name}`")))
    }

    pub fn tensors(&self) -> Result<&BTreeMap<String, TensorSpec>> {
        self.shapes.as_ref().ok_or(Error::ShapesNotInferred)
    }

    pub fn activation_params(&self) -> &BTreeMap<String, QuantParams> {
        &self.act_params
    }

    pub(crate) fn set_quantized(&mut self, nodes: Vec<LayerNode>, act_params: BTreeMap<String, QuantParams>) {
        self.nodes = nodes;
        self.act_params = act_params;
        self.dtype = DType::Int8;
        if let Some(shapes) = self.shapes.as_mut() {
            for spec in shapes.values_mut() {
                spec.dtype = DType::Int8;
            }
        }
    }

    /// A storage-accounting view: activations and weight payloads are counted
    /// at `dtype` without quantising anything. Shapes are kept.
    pub fn with_storage_dtype(&self, dtype: DType) -> Graph {
        let mut g = self.clone();
        g.dtype = dtype;
        if let Some(shapes) = g.shapes.as_mut() {
            for spec in shapes.values_mut() {
                spec.dtype = dtype;
            }
        }
        g
    }

    /// Extracts the nodes at `node_indices` as a standalone shaped graph.
    /// `inputs` become fixed-shape graph inputs; shapes, dtype and
    /// activation scales are carried over from `self`.
    pub(crate) fn subgraph(&self, node_indices: &[usize], inputs: &[String], outputs: Vec<String>) -> Result<Graph> {
        let shapes = self.shapes.as_ref().ok_or(Error::ShapesNotInferred)?;
        let graph_inputs = inputs
            .iter()
            .map(|name| {
                let orig = self.inputs.iter().find(|i| &i.name == name);
                let dims = shapes[name].dims.clone();
                let mut gi = GraphInput::fixed(name.clone(), dims);
                if let Some(orig) = orig {
                    gi.layout = orig.layout;
                }
                gi
            })
            .collect();
        let nodes: Vec<LayerNode> = node_indices.iter().map(|&i| self.nodes[i].clone()).collect();
        let mut sub = Graph::new(graph_inputs, nodes, outputs)?;
        let names: HashSet<&str> =
            inputs.iter().map(String::as_str).chain(sub.nodes.iter().map(|n| n.output.as_str())).collect();
        sub.shapes = Some(
            shapes.iter().filter(|(k, _)| names.contains(k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect(),
        );
        sub.act_params =
            self.act_params.iter().filter(|(k, _)| names.contains(k.as_str())).map(|(k, v)| (k.clone(), *v)).collect();
        sub.dtype = self.dtype;
        sub.resolution = self.resolution;
        Ok(sub)
    }

    /// Node id of the producer of every node-produced tensor.
    pub fn producers(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.output.as_str(), i)).collect()
    }

    /// Node indices consuming each tensor, in node order.
    pub fn consumers(&self) -> HashMap<&str, Vec<usize>> {
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for t in &n.inputs {
                let entry = map.entry(t.as_str()).or_default();
                if entry.last() != Some(&i) {
                    entry.push(i);
                }
            }
        }
        map
    }

    /// Kahn's algorithm with ties broken by ascending node id.
    pub(crate) fn topo_indices(&self) -> Result<Vec<usize>> {
        let producers = self.producers();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for t in &n.inputs {
                if let Some(&p) = producers.get(t.as_str()) {
                    indegree[i] += 1;
                    succ[p].push(i);
                }
            }
        }
        let mut ready: BinaryHeap<Reverse<(&str, usize)>> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| Reverse((self.nodes[i].id.as_str(), i)))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &s in &succ[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(Reverse((self.nodes[s].id.as_str(), s)));
                }
            }
        }
        if order.len() != self.nodes.len() {
            let mut stuck: Vec<String> =
                indegree.iter().enumerate().filter(|(_, &d)| d > 0).map(|(i, _)| self.nodes[i].id.clone()).collect();
            stuck.sort();
            return Err(Error::Cycle(stuck));
        }
        Ok(order)
    }
}

/// Deterministic topological order of node ids (ties broken by ascending id).
pub fn topo_order(g: &Graph) -> Vec<String> {
    g.topo_indices().expect("validated graphs are acyclic").into_iter().map(|i| g.nodes[i].id.clone()).collect()
}
