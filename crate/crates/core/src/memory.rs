//! Flash and working-memory accounting, L2/RAM placement and row tiling.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{topo_order, DType, Graph, LayerKind, Resolution};
use crate::partition::PartitionPlan;

/// Memory capacities and transfer characteristics of one microcontroller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub flash_bytes: u64,
    pub l2_bytes: u64,
    pub ram_bytes: u64,
    pub l1_bytes: u64,
    pub clock_hz: f64,
    pub load_bandwidth_bytes_per_s: f64,
    pub link_bandwidth_bytes_per_s: f64,
    pub link_latency_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_clock_hz: Option<f64>,
}

impl DeviceSpec {
    /// 2 MB eMRAM flash, 1.5 MB + 64 kB L2 treated as one pool, 128 kB
    /// cluster L1, 8 MB external RAM, 370 MHz. Bandwidths are placeholders.
    pub fn gap9() -> Self {
        Self {
            flash_bytes: 2 * 1024 * 1024,
            l2_bytes: 1_572_864 + 65_536,
            ram_bytes: 8 * 1024 * 1024,
            l1_bytes: 128 * 1024,
            clock_hz: 370e6,
            load_bandwidth_bytes_per_s: 100e6,
            link_bandwidth_bytes_per_s: 12.5e6,
            link_latency_s: 0.0,
            max_clock_hz: Some(370e6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let caps = [
            ("flash_bytes", self.flash_bytes),
            ("l2_bytes", self.l2_bytes),
            ("ram_bytes", self.ram_bytes),
            ("l1_bytes", self.l1_bytes),
        ];
        for (name, v) in caps {
            if v == 0 {
                return Err(Error::InvalidDevice(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("clock_hz", self.clock_hz),
            ("load_bandwidth_bytes_per_s", self.load_bandwidth_bytes_per_s),
            ("link_bandwidth_bytes_per_s", self.link_bandwidth_bytes_per_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidDevice(format!("{name} must be positive")));
            }
        }
        if !(self.link_latency_s.is_finite() && self.link_latency_s >= 0.0) {
            return Err(Error::InvalidDevice("link_latency_s must be non-negative".into()));
        }
        if let Some(max) = self.max_clock_hz {
            if self.clock_hz > max {
                return Err(Error::InvalidDevice(format!(
                    "clock {} Hz exceeds device maximum {max} Hz",
                    self.clock_hz
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dev: DeviceSpec = serde_json::from_str(text)?;
        dev.validate()?;
        Ok(dev)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub kernel_bytes: u64,
    pub bias_bytes: u64,
}

impl Footprint {
    pub fn total(&self) -> u64 {
        self.kernel_bytes + self.bias_bytes
    }
}

/// Stored weight payload: kernels at the graph's storage dtype, biases as
/// 32-bit values either way.
pub fn weight_footprint(g: &Graph) -> Footprint {
    let kernel_width = match g.dtype() {
        DType::Int8 => 1,
        _ => 4,
    };
    g.nodes().iter().fold(Footprint::default(), |mut fp, n| {
        let (kernel, bias) = match (&n.weights, &n.quant) {
            (_, Some(q)) => (q.kernel.len(), q.bias.as_ref().map_or(0, |b| b.len())),
            (Some(w), None) => (w.kernel.len(), w.bias.as_ref().map_or(0, |b| b.len())),
            (None, None) => (0, 0),
        };
        fp.kernel_bytes += (kernel * kernel_width) as u64;
        fp.bias_bytes += (bias * 4) as u64;
        fp
    })
}

/// Peak of simultaneously live activation bytes when nodes run in
/// `schedule` order.
///
/// A tensor is live from the step that produces it (step 0 for graph inputs)
/// to its last consumer; graph outputs stay live to the final step. No
/// buffer is reused in place.
pub fn peak_activation(g: &Graph, schedule: &[String]) -> Result<u64> {
    let tensors = g.tensors()?;
    let step_of: HashMap<&str, usize> = schedule.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if step_of.len() != g.nodes().len() || schedule.len() != g.nodes().len() {
        return Err(Error::InvalidArgument("schedule must list every node exactly once".into()));
    }
    let last = schedule.len().saturating_sub(1);
    let mut start: BTreeMap<&str, usize> = g.inputs().iter().map(|i| (i.name.as_str(), 0)).collect();
    for n in g.nodes() {
        let s = *step_of
            .get(n.id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("node `{}` missing from schedule", n.id)))?;
        start.insert(n.output.as_str(), s);
    }
    let mut end = start.clone();
    for n in g.nodes() {
        let s = step_of[n.id.as_str()];
        for t in &n.inputs {
            if start[t.as_str()] > s {
                return Err(Error::InvalidArgument(format!("schedule runs `{}` before the producer of `{t}`", n.id)));
            }
            let e = end.get_mut(t.as_str()).unwrap();
            *e = (*e).max(s);
        }
    }
    for o in g.outputs() {
        end.insert(o.as_str(), last);
    }
    let mut delta = vec![0i128; last + 2];
    for (t, &s) in &start {
        let bytes = tensors[*t].byte_size() as i128;
        delta[s] += bytes;
        delta[end[t] + 1] -= bytes;
    }
    let mut live = 0i128;
    let mut peak = 0i128;
    for d in &delta[..=last] {
        live += d;
        peak = peak.max(live);
    }
    Ok(peak as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Placement {
    L2,
    #[serde(rename = "RAM")]
    Ram,
}

impl std::fmt::Display for Placement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Placement::L2 => "L2",
            Placement::Ram => "RAM",
        })
    }
}

/// Working sets that fit L2 stay there; larger ones spill to external RAM.
pub fn place(working_bytes: u64, dev: &DeviceSpec) -> Result<Placement> {
    if working_bytes <= dev.l2_bytes {
        Ok(Placement::L2)
    } else if working_bytes <= dev.ram_bytes {
        Ok(Placement::Ram)
    } else {
        Err(Error::ExceedsDevice { working_bytes, ram_bytes: dev.ram_bytes })
    }
}

/// Dimensions of a convolution as seen by the tiler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub layer: String,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub stride: usize,
    pub pad: usize,
    pub elem_bytes: usize,
    pub weight_bytes: u64,
}

impl ConvGeometry {
    pub fn from_node(g: &Graph, node_id: &str) -> Result<Self> {
        let node = g.node(node_id).ok_or_else(|| Error::InvalidArgument(format!("no node `{node_id}`")))?;
        let LayerKind::Conv2d { k_h, stride, pad, .. } = node.kind else {
            return Err(Error::InvalidArgument(format!("node `{node_id}` is not a conv2d")));
        };
        let input = g.tensor(&node.inputs[0])?;
        let output = g.tensor(&node.output)?;
        let (in_h, in_w, in_c) = input.hwc().ok_or(Error::UnsupportedRank { rank: input.dims.len(), op: "tiling" })?;
        let (out_h, out_w, out_c) =
            output.hwc().ok_or(Error::UnsupportedRank { rank: output.dims.len(), op: "tiling" })?;
        let single = g.subgraph(
            &[g.nodes().iter().position(|n| n.id == node_id).unwrap()],
            &node.inputs,
            vec![node.output.clone()],
        )?;
        Ok(Self {
            layer: node_id.to_string(),
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            k_h,
            stride,
            pad,
            elem_bytes: output.dtype.width(),
            weight_bytes: weight_footprint(&single).total(),
        })
    }

    fn in_row_bytes(&self) -> u64 {
        (self.in_w * self.in_c * self.elem_bytes) as u64
    }

    fn out_row_bytes(&self) -> u64 {
        (self.out_w * self.out_c * self.elem_bytes) as u64
    }

    /// Input rows needed for `rows` output rows, halo included.
    pub fn input_rows(&self, rows: usize) -> usize {
        (rows - 1) * self.stride + self.k_h
    }

    /// Double-buffered input and output tiles plus resident weights.
    pub fn buffer_bytes(&self, rows: usize) -> u64 {
        2 * (self.input_rows(rows) as u64 * self.in_row_bytes() + rows as u64 * self.out_row_bytes())
            + self.weight_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub out_row_start: usize,
    pub out_rows: usize,
    /// Input rows actually transferred (padding rows are not).
    pub in_row_start: usize,
    pub in_rows: usize,
    pub buffer_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub layer: String,
    pub tile_rows: usize,
    pub n_tiles: usize,
    pub halo_rows: usize,
    pub buffer_bytes: u64,
    pub transfer_bytes_total: u64,
    pub tiles: Vec<Tile>,
}

/// Picks the tallest row tile whose double-buffered footprint fits `budget`.
pub fn tile_plan(conv: &ConvGeometry, budget: u64) -> Result<TilePlan> {
    if conv.weight_bytes > budget {
        return Err(Error::TilingInfeasible(format!(
            "layer `{}`: weights alone need {} bytes, budget is {budget}",
            conv.layer, conv.weight_bytes
        )));
    }
    // buffer_bytes is increasing in the row count
    let fits = |t: usize| conv.buffer_bytes(t) <= budget;
    if !fits(1) {
        return Err(Error::TilingInfeasible(format!(
            "layer `{}`: a single output row needs {} bytes, budget is {budget}",
            conv.layer,
            conv.buffer_bytes(1)
        )));
    }
    let (mut lo, mut hi) = (1usize, conv.out_h);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let tile_rows = lo;
    let mut tiles = Vec::new();
    let mut transfer = 0u64;
    let mut row = 0;
    while row < conv.out_h {
        let rows = tile_rows.min(conv.out_h - row);
        let first = (row * conv.stride) as isize - conv.pad as isize;
        let last = first + conv.input_rows(rows) as isize;
        let in_start = first.max(0) as usize;
        let in_end = (last.min(conv.in_h as isize)).max(first.max(0)) as usize;
        let in_rows = in_end - in_start;
        transfer += in_rows as u64 * conv.in_row_bytes() + rows as u64 * conv.out_row_bytes();
        tiles.push(Tile {
            out_row_start: row,
            out_rows: rows,
            in_row_start: in_start,
            in_rows,
            buffer_bytes: conv.buffer_bytes(rows),
        });
        row += rows;
    }
    Ok(TilePlan {
        layer: conv.layer.clone(),
        tile_rows,
        n_tiles: tiles.len(),
        halo_rows: conv.k_h - 1,
        buffer_bytes: conv.buffer_bytes(tile_rows),
        transfer_bytes_total: transfer,
        tiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiling {
    pub layer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<TilePlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMemory {
    pub name: String,
    /// Weight + bias payload stored in flash.
    pub flash_bytes: u64,
    pub kernel_bytes: u64,
    pub bias_bytes: u64,
    /// Peak live activation bytes.
    pub working_bytes: u64,
    pub placement: Placement,
    /// Working bytes held in L2 (zero when spilled).
    pub l2_working_bytes: u64,
    /// Working bytes spilled to RAM (zero when they fit L2).
    pub ram_bytes: u64,
    /// Weights plus working set, for comparison with L2-inclusive figures.
    pub weights_plus_working_bytes: u64,
    pub exceeds_flash: bool,
    pub tiling: Vec<LayerTiling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTotals {
    pub flash_bytes: u64,
    pub max_working_bytes: u64,
    pub transfer_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub dtype: DType,
    pub resolution: Resolution,
    pub stages: Vec<StageMemory>,
    pub totals: MemoryTotals,
}

impl MemoryReport {
    /// Replaces computed flash footprints with externally measured values,
    /// keyed by stage name.
    pub fn apply_flash_overrides(&mut self, overrides: &BTreeMap<String, u64>, dev: &DeviceSpec) {
        for stage in &mut self.stages {
            if let Some(&bytes) = overrides.get(&stage.name) {
                stage.flash_bytes = bytes;
                stage.exceeds_flash = bytes > dev.flash_bytes;
            }
        }
        self.totals.flash_bytes = self.stages.iter().map(|s| s.flash_bytes).sum();
    }
}

pub fn stage_memory(name: &str, g: &Graph, dev: &DeviceSpec) -> Result<StageMemory> {
    let fp = weight_footprint(g);
    let working = peak_activation(g, &topo_order(g))?;
    let placement = place(working, dev)?;
    let tiling = g
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Conv2d { .. }))
        .map(|n| {
            let geo = ConvGeometry::from_node(g, &n.id)?;
            Ok(match tile_plan(&geo, dev.l1_bytes) {
                Ok(plan) => LayerTiling { layer: n.id.clone(), plan: Some(plan), infeasible: None },
                Err(e) => LayerTiling { layer: n.id.clone(), plan: None, infeasible: Some(e.to_string()) },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StageMemory {
        name: name.to_string(),
        flash_bytes: fp.total(),
        kernel_bytes: fp.kernel_bytes,
        bias_bytes: fp.bias_bytes,
        working_bytes: working,
        placement,
        l2_working_bytes: if placement == Placement::L2 { working } else { 0 },
        ram_bytes: if placement == Placement::Ram { working } else { 0 },
        weights_plus_working_bytes: fp.total() + working,
        exceeds_flash: fp.total() > dev.flash_bytes,
        tiling,
    })
}

/// Per-stage footprints of `plan` rebound to `dtype` storage at `res`.
pub fn memory_report(plan: &PartitionPlan, dev: &DeviceSpec, dtype: DType, res: Resolution) -> Result<MemoryReport> {
    let plan = plan.rebind(res, dtype)?;
    let stages = plan.stages().iter().map(|s| stage_memory(&s.name, &s.graph, dev)).collect::<Result<Vec<_>>>()?;
    let totals = MemoryTotals {
        flash_bytes: stages.iter().map(|s| s.flash_bytes).sum(),
        max_working_bytes: stages.iter().map(|s| s.working_bytes).max().unwrap_or(0),
        transfer_bytes: plan.transfer_bytes(),
    };
    Ok(MemoryReport { dtype, resolution: res, stages, totals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, GraphInput, LayerNode, Weights};

    fn shaped(inputs: Vec<GraphInput>, nodes: Vec<LayerNode>, outputs: &[&str]) -> Graph {
        let g = Graph::new(inputs, nodes, outputs.iter().map(|s| s.to_string()).collect()).unwrap();
        infer_shapes(&g, Resolution::new(1, 1)).unwrap()
    }

    fn relu(id: &str, i: &str, o: &str) -> LayerNode {
        LayerNode::new(id, LayerKind::Relu, vec![i.into()], o)
    }

    fn conv_node(k: usize, cin: usize, cout: usize, bias: bool) -> LayerNode {
        LayerNode::new(
            "conv",
            LayerKind::Conv2d { k_h: k, k_w: k, stride: 2, pad: 3, out_channels: cout },
            vec!["x".into()],
            "y",
        )
        .with_weights(Weights::new(vec![0.0; cout * k * k * cin], bias.then(|| vec![0.0; cout])))
    }

    #[test]
    fn stem_conv_footprints() {
        let g =
            Graph::new(vec![GraphInput::spatial("x", 4)], vec![conv_node(7, 4, 64, true)], vec!["y".into()]).unwrap();
        let fp = weight_footprint(&g);
        assert_eq!(fp, Footprint { kernel_bytes: 64 * 4 * 49 * 4, bias_bytes: 256 });
        assert_eq!(fp.kernel_bytes, 50_176);
        let fp8 = weight_footprint(&g.with_storage_dtype(DType::Int8));
        assert_eq!(fp8, Footprint { kernel_bytes: 12_544, bias_bytes: 256 });
    }

    #[test]
    fn weightless_graph_has_no_footprint() {
        let g = shaped(vec![GraphInput::fixed("x", vec![4])], vec![relu("r", "x", "y")], &["y"]);
        assert_eq!(weight_footprint(&g).total(), 0);
    }

    #[test]
    fn chain_peak() {
        // 25 float32 elements = 100 bytes
        let g = shaped(vec![GraphInput::fixed("in", vec![25])], vec![relu("r", "in", "out")], &["out"]);
        assert_eq!(peak_activation(&g, &topo_order(&g)).unwrap(), 200);
    }

    #[test]
    fn diamond_peak() {
        let g = shaped(
            vec![GraphInput::fixed("a", vec![25])],
            vec![
                relu("b", "a", "tb"),
                relu("c", "a", "tc"),
                LayerNode::new("d", LayerKind::Add, vec!["tb".into(), "tc".into()], "out"),
            ],
            &["out"],
        );
        assert_eq!(peak_activation(&g, &topo_order(&g)).unwrap(), 300);
    }

    #[test]
    fn identity_peak_is_twice_the_tensor() {
        let g = shaped(
            vec![GraphInput::fixed("x", vec![7])],
            vec![LayerNode::new("i", LayerKind::Identity, vec!["x".into()], "y")],
            &["y"],
        );
        assert_eq!(peak_activation(&g, &topo_order(&g)).unwrap(), 2 * 28);
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let g =
            shaped(vec![GraphInput::fixed("x", vec![2])], vec![relu("a", "x", "ta"), relu("b", "ta", "tb")], &["tb"]);
        assert!(peak_activation(&g, &["b".into(), "a".into()]).is_err());
        assert!(peak_activation(&g, &["a".into()]).is_err());
    }

    #[test]
    fn placement_rule() {
        let dev = DeviceSpec::gap9();
        assert_eq!(dev.l2_bytes, 1_638_400);
        assert_eq!(dev.ram_bytes, 8_388_608);
        assert_eq!(place(963_092, &dev).unwrap(), Placement::L2);
        assert_eq!(place(1_638_400, &dev).unwrap(), Placement::L2);
        assert_eq!(place(1_700_000, &dev).unwrap(), Placement::Ram);
        assert!(matches!(place(8_388_609, &dev), Err(Error::ExceedsDevice { .. })));
    }

    #[test]
    fn device_validation() {
        let mut dev = DeviceSpec::gap9();
        assert!(dev.validate().is_ok());
        dev.clock_hz = 400e6;
        assert!(dev.validate().is_err());
        let mut dev = DeviceSpec::gap9();
        dev.l1_bytes = 0;
        assert!(dev.validate().is_err());
        let text = serde_json::to_string(&DeviceSpec::gap9()).unwrap();
        assert_eq!(DeviceSpec::from_json(&text).unwrap(), DeviceSpec::gap9());
    }

    fn geometry(k: usize, h: usize, w: usize, c: usize, weight_bytes: u64) -> ConvGeometry {
        ConvGeometry {
            layer: "conv".into(),
            in_h: h,
            in_w: w,
            in_c: c,
            out_h: h,
            out_w: w,
            out_c: c,
            k_h: k,
            stride: 1,
            pad: k / 2,
            elem_bytes: 1,
            weight_bytes,
        }
    }

    #[test]
    fn pointwise_conv_fits_in_one_tile() {
        let geo = geometry(1, 8, 8, 4, 16);
        let plan = tile_plan(&geo, 1 << 20).unwrap();
        assert_eq!((plan.n_tiles, plan.halo_rows, plan.tile_rows), (1, 0, 8));
        assert_eq!(plan.transfer_bytes_total, 2 * 8 * 8 * 4);
    }

    #[test]
    fn three_by_three_tiling_by_enumeration() {
        let geo = geometry(3, 32, 32, 8, 576);
        // brute force: largest t with 2·((t+2)·256 + t·256) + 576 ≤ 6000
        let expected = (1..=32).filter(|&t| 2 * ((t + 2) * 256 + t * 256) + 576 <= 6000).max().unwrap();
        assert_eq!(expected, 4);
        let plan = tile_plan(&geo, 6000).unwrap();
        assert_eq!(plan.tile_rows, 4);
        assert_eq!(plan.n_tiles, 8);
        assert_eq!(plan.halo_rows, 2);
        assert!(plan.buffer_bytes <= 6000);
        assert_eq!(plan.tiles.iter().map(|t| t.out_rows).sum::<usize>(), 32);
    }

    #[test]
    fn tiling_infeasible_cases() {
        assert!(matches!(tile_plan(&geometry(3, 32, 32, 8, 576), 500), Err(Error::TilingInfeasible(_))));
        // weights fit but a single row does not: 2·(3·256 + 256) + 576 = 2624
        assert!(tile_plan(&geometry(3, 32, 32, 8, 576), 2623).is_err());
        assert!(tile_plan(&geometry(3, 32, 32, 8, 576), 2624).is_ok());
    }
}
