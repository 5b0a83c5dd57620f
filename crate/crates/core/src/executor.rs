//! Reference interpreter.
//!
//! This is an oracle, not a runtime: plain loops, a fixed summation order
//! (kernel window row-major, then input channels) and HWC activations
//! everywhere. Because the order is fixed, executing a graph in pieces gives
//! bitwise the same result as executing it whole.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{convert_layout, DType, Graph, LayerKind, LayerNode, Layout, TensorSpec};
use crate::quantizer::{saturate, QuantParams, QuantizedTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub spec: TensorSpec,
    /// Elements in `spec.layout` order.
    pub data: Vec<f32>,
}

impl Activation {
    pub fn new(spec: TensorSpec, data: Vec<f32>) -> Result<Self> {
        if data.len() != spec.numel() {
            return Err(Error::ShapeMismatch(format!(
                "activation `{}` has {} elements, dims {:?}",
                spec.name,
                data.len(),
                spec.dims
            )));
        }
        Ok(Self { spec, data })
    }

    /// Same data in HWC order (flat tensors are returned unchanged).
    pub fn to_hwc(&self) -> Result<Activation> {
        if self.spec.layout == Layout::Chw {
            let (spec, data) = convert_layout(&self.spec, &self.data, Layout::Hwc)?;
            Ok(Activation { spec, data })
        } else {
            Ok(self.clone())
        }
    }
}

/// Canonicalises a supplied graph input against the graph's inferred spec.
fn bind_input<T: Copy>(g: &Graph, name: &str, spec: &TensorSpec, data: &[T]) -> Result<Vec<T>> {
    let expected = g.tensor(name)?;
    let data = if spec.layout == Layout::Chw { convert_layout(spec, data, Layout::Hwc)?.1 } else { data.to_vec() };
    let dims = match spec.hwc() {
        Some((h, w, c)) => vec![h, w, c],
        None => spec.dims.clone(),
    };
    if dims != expected.dims || data.len() != expected.numel() {
        return Err(Error::ShapeMismatch(format!(
            "input `{name}` has dims {:?}, graph expects {:?}",
            spec.dims, expected.dims
        )));
    }
    Ok(data)
}

/// Runs the float graph and returns its declared outputs.
pub fn exec_float(g: &Graph, inputs: &BTreeMap<String, Activation>) -> Result<BTreeMap<String, Activation>> {
    let mut all = exec_float_all(g, inputs)?;
    Ok(g.outputs().iter().map(|o| (o.clone(), all.remove(o).expect("output produced"))).collect())
}

/// Runs the float graph and returns every tensor (inputs included).
pub fn exec_float_all(g: &Graph, inputs: &BTreeMap<String, Activation>) -> Result<BTreeMap<String, Activation>> {
    let mut env: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for input in g.inputs() {
        let a = inputs.get(&input.name).ok_or_else(|| Error::MissingInput(input.name.clone()))?;
        env.insert(input.name.clone(), bind_input(g, &input.name, &a.spec, &a.data)?);
    }
    for idx in g.topo_indices()? {
        let node = &g.nodes()[idx];
        let out = float_node(g, node, &env)?;
        env.insert(node.output.clone(), out);
    }
    env.into_iter()
        .map(|(name, data)| {
            let spec = TensorSpec { dtype: DType::Float32, ..g.tensor(&name)?.clone() };
            Ok((name, Activation { spec, data }))
        })
        .collect()
}

struct Geometry {
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_h: usize,
    out_w: usize,
}

fn geometry(g: &Graph, node: &LayerNode) -> Result<Geometry> {
    let input = g.tensor(&node.inputs[0])?;
    let output = g.tensor(&node.output)?;
    let (in_h, in_w, in_c) =
        input.hwc().ok_or(Error::UnsupportedRank { rank: input.dims.len(), op: "spatial layer" })?;
    let (out_h, out_w, _) =
        output.hwc().ok_or(Error::UnsupportedRank { rank: output.dims.len(), op: "spatial layer" })?;
    Ok(Geometry { in_h, in_w, in_c, out_h, out_w })
}

/// Calls `f(input_index, kernel_index)` for every in-bounds tap of one
/// output position, in the fixed summation order.
#[inline]
#[allow(clippy::too_many_arguments)]
fn for_each_tap(
    geo: &Geometry,
    oy: usize,
    ox: usize,
    k_h: usize,
    k_w: usize,
    stride: usize,
    pad: usize,
    mut f: impl FnMut(usize, usize),
) {
    for ky in 0..k_h {
        let iy = (oy * stride + ky) as isize - pad as isize;
        if iy < 0 || iy >= geo.in_h as isize {
            continue;
        }
        for kx in 0..k_w {
            let ix = (ox * stride + kx) as isize - pad as isize;
            if ix < 0 || ix >= geo.in_w as isize {
                continue;
            }
            let base = (iy as usize * geo.in_w + ix as usize) * geo.in_c;
            let kbase = (ky * k_w + kx) * geo.in_c;
            for c in 0..geo.in_c {
                f(base + c, kbase + c);
            }
        }
    }
}

fn concat<T: Copy>(g: &Graph, node: &LayerNode, axis: usize, parts: &[&Vec<T>]) -> Result<Vec<T>> {
    let first = g.tensor(&node.inputs[0])?;
    let outer: usize = first.dims[..axis].iter().product();
    let inners: Vec<usize> =
        node.inputs.iter().map(|t| g.tensor(t).map(|s| s.dims[axis..].iter().product())).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for o in 0..outer {
        for (part, &inner) in parts.iter().zip(&inners) {
            out.extend_from_slice(&part[o * inner..(o + 1) * inner]);
        }
    }
    Ok(out)
}

fn upsample<T: Copy>(geo: &Geometry, factor: usize, x: &[T]) -> Vec<T> {
    let c = geo.in_c;
    let mut out = Vec::with_capacity(geo.out_h * geo.out_w * c);
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let base = ((oy / factor) * geo.in_w + ox / factor) * c;
            out.extend_from_slice(&x[base..base + c]);
        }
    }
    out
}

fn float_node(g: &Graph, node: &LayerNode, env: &BTreeMap<String, Vec<f32>>) -> Result<Vec<f32>> {
    let x = &env[&node.inputs[0]];
    let out_len = g.tensor(&node.output)?.numel();
    let weights = || {
        node.weights.as_ref().ok_or_else(|| Error::InvalidGraph(format!("node `{}` carries no float weights", node.id)))
    };
    Ok(match node.kind {
        LayerKind::Conv2d { k_h, k_w, stride, pad, out_channels } => {
            let geo = geometry(g, node)?;
            let w = weights()?;
            let ksize = k_h * k_w * geo.in_c;
            let mut out = Vec::with_capacity(out_len);
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    for oc in 0..out_channels {
                        let kernel = &w.kernel[oc * ksize..(oc + 1) * ksize];
                        let mut acc = 0.0f32;
                        for_each_tap(&geo, oy, ox, k_h, k_w, stride, pad, |i, k| acc += x[i] * kernel[k]);
                        if let Some(b) = &w.bias {
                            acc += b[oc];
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        LayerKind::Dense { out_features } => {
            let w = weights()?;
            let inner = *g.tensor(&node.inputs[0])?.dims.last().unwrap();
            let mut out = Vec::with_capacity(out_len);
            for row in x.chunks_exact(inner) {
                for o in 0..out_features {
                    let kernel = &w.kernel[o * inner..(o + 1) * inner];
                    let mut acc = 0.0f32;
                    for (a, b) in row.iter().zip(kernel) {
                        acc += a * b;
                    }
                    if let Some(b) = &w.bias {
                        acc += b[o];
                    }
                    out.push(acc);
                }
            }
            out
        }
        LayerKind::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        LayerKind::Identity => x.clone(),
        LayerKind::MaxPool { k, stride } | LayerKind::AvgPool { k, stride } => {
            let geo = geometry(g, node)?;
            let is_max = matches!(node.kind, LayerKind::MaxPool { .. });
            let mut out = Vec::with_capacity(out_len);
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    for c in 0..geo.in_c {
                        let mut acc = if is_max { f32::NEG_INFINITY } else { 0.0 };
                        for ky in 0..k {
                            for kx in 0..k {
                                let v = x[((oy * stride + ky) * geo.in_w + ox * stride + kx) * geo.in_c + c];
                                if is_max {
                                    acc = acc.max(v);
                                } else {
                                    acc += v;
                                }
                            }
                        }
                        out.push(if is_max { acc } else { acc / (k * k) as f32 });
                    }
                }
            }
            out
        }
        LayerKind::UpsampleNearest { factor } => upsample(&geometry(g, node)?, factor, x),
        LayerKind::Add => {
            let mut out = x.clone();
            for t in &node.inputs[1..] {
                for (o, v) in out.iter_mut().zip(&env[t]) {
                    *o += v;
                }
            }
            out
        }
        LayerKind::Concat { axis } => {
            let parts: Vec<&Vec<f32>> = node.inputs.iter().map(|t| &env[t]).collect();
            concat(g, node, axis, &parts)?
        }
    })
}

/// Runs a quantised graph. Inputs must carry the scales the graph declares.
pub fn exec_int8(g: &Graph, inputs: &BTreeMap<String, QuantizedTensor>) -> Result<BTreeMap<String, QuantizedTensor>> {
    if g.dtype() != DType::Int8 {
        return Err(Error::MissingQuantParams("graph has not been quantised".into()));
    }
    let params = g.activation_params();
    let param = |t: &str| {
        params.get(t).copied().ok_or_else(|| Error::MissingQuantParams(format!("no activation scale for tensor `{t}`")))
    };
    let mut env: BTreeMap<String, (Vec<i8>, QuantParams)> = BTreeMap::new();
    for input in g.inputs() {
        let q = inputs.get(&input.name).ok_or_else(|| Error::MissingInput(input.name.clone()))?;
        let declared = param(&input.name)?;
        if q.params != declared {
            return Err(Error::ShapeMismatch(format!(
                "input `{}` quantised at scale {}, graph declares {}",
                input.name, q.params.scale, declared.scale
            )));
        }
        env.insert(input.name.clone(), (bind_input(g, &input.name, &q.spec, &q.data)?, declared));
    }
    for idx in g.topo_indices()? {
        let node = &g.nodes()[idx];
        let out_params = param(&node.output)?;
        let out = int8_node(g, node, &env, out_params)?;
        env.insert(node.output.clone(), (out, out_params));
    }
    g.outputs()
        .iter()
        .map(|o| {
            let (data, params) = env.remove(o).expect("output produced");
            let spec = TensorSpec { dtype: DType::Int8, ..g.tensor(o)?.clone() };
            Ok((o.clone(), QuantizedTensor { spec, data, params }))
        })
        .collect()
}

fn requant(acc: f64, multiplier: f64) -> i8 {
    saturate((acc * multiplier).round())
}

fn int8_node(
    g: &Graph,
    node: &LayerNode,
    env: &BTreeMap<String, (Vec<i8>, QuantParams)>,
    out_params: QuantParams,
) -> Result<Vec<i8>> {
    let (x, in_params) = &env[&node.inputs[0]];
    let out_len = g.tensor(&node.output)?.numel();
    let quant = || {
        node.quant
            .as_ref()
            .ok_or_else(|| Error::MissingQuantParams(format!("node `{}` has no quantised weights", node.id)))
    };
    let overflow = || Error::AccumulatorOverflow(node.id.clone());
    Ok(match node.kind {
        LayerKind::Conv2d { k_h, k_w, stride, pad, out_channels } => {
            let geo = geometry(g, node)?;
            let q = quant()?;
            let multiplier = in_params.scale * q.kernel_params.scale / out_params.scale;
            let ksize = k_h * k_w * geo.in_c;
            let mut out = Vec::with_capacity(out_len);
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    for oc in 0..out_channels {
                        let kernel = &q.kernel[oc * ksize..(oc + 1) * ksize];
                        let mut acc: Option<i32> = Some(0);
                        for_each_tap(&geo, oy, ox, k_h, k_w, stride, pad, |i, k| {
                            acc = acc.and_then(|a| a.checked_add(x[i] as i32 * kernel[k] as i32));
                        });
                        if let Some(b) = &q.bias {
                            acc = acc.and_then(|a| a.checked_add(b[oc]));
                        }
                        out.push(requant(acc.ok_or_else(overflow)? as f64, multiplier));
                    }
                }
            }
            out
        }
        LayerKind::Dense { out_features } => {
            let q = quant()?;
            let multiplier = in_params.scale * q.kernel_params.scale / out_params.scale;
            let inner = *g.tensor(&node.inputs[0])?.dims.last().unwrap();
            let mut out = Vec::with_capacity(out_len);
            for row in x.chunks_exact(inner) {
                for o in 0..out_features {
                    let kernel = &q.kernel[o * inner..(o + 1) * inner];
                    let mut acc: i32 = 0;
                    for (&a, &b) in row.iter().zip(kernel) {
                        acc = acc.checked_add(a as i32 * b as i32).ok_or_else(overflow)?;
                    }
                    if let Some(b) = &q.bias {
                        acc = acc.checked_add(b[o]).ok_or_else(overflow)?;
                    }
                    out.push(requant(acc as f64, multiplier));
                }
            }
            out
        }
        LayerKind::Relu => x.iter().map(|&v| v.max(0)).collect(),
        LayerKind::Identity => x.clone(),
        LayerKind::MaxPool { k, stride } | LayerKind::AvgPool { k, stride } => {
            let geo = geometry(g, node)?;
            let is_max = matches!(node.kind, LayerKind::MaxPool { .. });
            let multiplier = in_params.scale / ((k * k) as f64 * out_params.scale);
            let mut out = Vec::with_capacity(out_len);
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    for c in 0..geo.in_c {
                        let mut max = i8::MIN;
                        let mut sum = 0i32;
                        for ky in 0..k {
                            for kx in 0..k {
                                let v = x[((oy * stride + ky) * geo.in_w + ox * stride + kx) * geo.in_c + c];
                                max = max.max(v);
                                sum += v as i32;
                            }
                        }
                        out.push(if is_max { max } else { requant(sum as f64, multiplier) });
                    }
                }
            }
            out
        }
        LayerKind::UpsampleNearest { factor } => upsample(&geometry(g, node)?, factor, x),
        LayerKind::Add => {
            let mut acc = vec![0.0f64; x.len()];
            for t in &node.inputs {
                let (v, p) = &env[t];
                let m = p.scale / out_params.scale;
                for (a, &q) in acc.iter_mut().zip(v) {
                    *a += q as f64 * m;
                }
            }
            acc.into_iter().map(|a| saturate(a.round())).collect()
        }
        LayerKind::Concat { axis } => {
            let rescaled: Vec<Vec<i8>> = node
                .inputs
                .iter()
                .map(|t| {
                    let (v, p) = &env[t];
                    if p.scale == out_params.scale {
                        v.clone()
                    } else {
                        v.iter().map(|&q| requant(q as f64, p.scale / out_params.scale)).collect()
                    }
                })
                .collect();
            let parts: Vec<&Vec<i8>> = rescaled.iter().collect();
            concat(g, node, axis, &parts)?
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub bitwise_equal: bool,
    pub max_abs: f64,
    pub max_rel: f64,
}

/// Elementwise comparison after normalising both tensors to HWC.
pub fn compare_outputs(a: &Activation, b: &Activation) -> Result<Comparison> {
    let a = a.to_hwc()?;
    let b = b.to_hwc()?;
    if a.spec.dims != b.spec.dims {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.spec.dims, b.spec.dims)));
    }
    let mut cmp = Comparison { bitwise_equal: true, max_abs: 0.0, max_rel: 0.0 };
    for (&x, &y) in a.data.iter().zip(&b.data) {
        cmp.bitwise_equal &= x.to_bits() == y.to_bits();
        let diff = (x as f64 - y as f64).abs();
        let denom = (x as f64).abs().max((y as f64).abs());
        cmp.max_abs = cmp.max_abs.max(diff);
        if denom > 0.0 {
            cmp.max_rel = cmp.max_rel.max(diff / denom);
        }
    }
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, GraphInput, QuantWeights, Resolution, Weights};
    use crate::quantizer::{dequantize, quantize};

    fn hwc(name: &str, h: usize, w: usize, c: usize, data: Vec<f32>) -> Activation {
        Activation::new(TensorSpec::new(name, vec![h, w, c], Layout::Hwc, DType::Float32).unwrap(), data).unwrap()
    }

    fn single(node: LayerNode, channels: usize, res: Resolution) -> Graph {
        let g = Graph::new(vec![GraphInput::spatial("x", channels)], vec![node], vec!["y".into()]).unwrap();
        infer_shapes(&g, res).unwrap()
    }

    fn conv(k: usize, stride: usize, pad: usize, w: Vec<f32>, b: Option<Vec<f32>>, cout: usize) -> LayerNode {
        LayerNode::new(
            "conv",
            LayerKind::Conv2d { k_h: k, k_w: k, stride, pad, out_channels: cout },
            vec!["x".into()],
            "y",
        )
        .with_weights(Weights::new(w, b))
    }

    #[test]
    fn identity_returns_input_bitwise() {
        let g = single(LayerNode::new("id", LayerKind::Identity, vec!["x".into()], "y"), 2, Resolution::new(2, 3));
        let data: Vec<f32> = (0..12).map(|i| (i as f32).sin() * 1e-3).collect();
        let out = exec_float(&g, &BTreeMap::from([("x".into(), hwc("x", 2, 3, 2, data.clone()))])).unwrap();
        assert_eq!(out["y"].data, data);
    }

    #[test]
    fn unit_conv_scales() {
        let g = single(conv(1, 1, 0, vec![2.0], Some(vec![0.0]), 1), 1, Resolution::new(2, 2));
        let out = exec_float(&g, &BTreeMap::from([("x".into(), hwc("x", 2, 2, 1, vec![1.0; 4]))])).unwrap();
        assert_eq!(out["y"].data, vec![2.0; 4]);
    }

    #[test]
    fn three_by_three_valid_conv_is_a_dot_product() {
        let x: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let w: Vec<f32> = vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5, 1.0, 1.0, -2.0];
        // 0.5 - 2 + 6 + 0 + 7.5 - 3 + 7 + 8 - 18 = 6.0
        let g = single(conv(3, 1, 0, w, None, 1), 1, Resolution::new(3, 3));
        let out = exec_float(&g, &BTreeMap::from([("x".into(), hwc("x", 3, 3, 1, x))])).unwrap();
        assert_eq!(out["y"].spec.dims, vec![1, 1, 1]);
        assert_eq!(out["y"].data, vec![6.0]);
    }

    #[test]
    fn chw_inputs_are_normalised() {
        let g = single(LayerNode::new("id", LayerKind::Identity, vec!["x".into()], "y"), 2, Resolution::new(1, 2));
        let chw = Activation::new(
            TensorSpec::new("x", vec![2, 1, 2], Layout::Chw, DType::Float32).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let out = exec_float(&g, &BTreeMap::from([("x".into(), chw)])).unwrap();
        assert_eq!(out["y"].data, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn missing_input_and_shape_mismatch() {
        let g = single(LayerNode::new("id", LayerKind::Identity, vec!["x".into()], "y"), 1, Resolution::new(2, 2));
        assert!(matches!(exec_float(&g, &BTreeMap::new()), Err(Error::MissingInput(_))));
        let wrong = BTreeMap::from([("x".into(), hwc("x", 3, 2, 1, vec![0.0; 6]))]);
        assert!(matches!(exec_float(&g, &wrong), Err(Error::ShapeMismatch(_))));
    }

    fn quantised_unit_conv(q_w: i8, bias: i32, s_in: f64, s_w: f64, s_out: f64) -> Graph {
        let g = single(conv(1, 1, 0, vec![1.0], Some(vec![0.0]), 1), 1, Resolution::new(1, 1));
        let mut nodes = g.nodes().to_vec();
        nodes[0].quant = Some(QuantWeights {
            kernel: vec![q_w].into(),
            kernel_params: QuantParams::new(s_w).unwrap(),
            bias: Some(vec![bias].into()),
        });
        let mut q = g.clone();
        q.set_quantized(
            nodes,
            BTreeMap::from([
                ("x".to_string(), QuantParams::new(s_in).unwrap()),
                ("y".to_string(), QuantParams::new(s_out).unwrap()),
            ]),
        );
        q
    }

    fn qin(v: i8, s: f64) -> BTreeMap<String, QuantizedTensor> {
        let spec = TensorSpec::new("x", vec![1, 1, 1], Layout::Hwc, DType::Int8).unwrap();
        BTreeMap::from([("x".into(), QuantizedTensor { spec, data: vec![v], params: QuantParams::new(s).unwrap() })])
    }

    #[test]
    fn single_mac_int8() {
        let g = quantised_unit_conv(2, 0, 1.0, 1.0, 1.0);
        assert_eq!(exec_int8(&g, &qin(3, 1.0)).unwrap()["y"].data, vec![6]);
    }

    #[test]
    fn int8_saturates() {
        // accumulator 100 * 2 = 200 at multiplier 1
        let g = quantised_unit_conv(2, 0, 1.0, 1.0, 1.0);
        assert_eq!(exec_int8(&g, &qin(100, 1.0)).unwrap()["y"].data, vec![127]);
        assert_eq!(exec_int8(&g, &qin(-100, 1.0)).unwrap()["y"].data, vec![-127]);
    }

    #[test]
    fn int8_identity_keeps_scale() {
        let g = single(LayerNode::new("id", LayerKind::Identity, vec!["x".into()], "y"), 1, Resolution::new(1, 1));
        let mut q = g.clone();
        let p = QuantParams::new(0.3).unwrap();
        q.set_quantized(g.nodes().to_vec(), BTreeMap::from([("x".to_string(), p), ("y".to_string(), p)]));
        let out = exec_int8(&q, &qin(-42, 0.3)).unwrap();
        assert_eq!(out["y"].data, vec![-42]);
        assert_eq!(out["y"].params, p);
    }

    #[test]
    fn int8_requires_quantised_weights() {
        let g = single(conv(1, 1, 0, vec![1.0], None, 1), 1, Resolution::new(1, 1));
        let mut q = g.clone();
        let p = QuantParams::new(1.0).unwrap();
        q.set_quantized(g.nodes().to_vec(), BTreeMap::from([("x".to_string(), p), ("y".to_string(), p)]));
        assert!(matches!(exec_int8(&q, &qin(1, 1.0)), Err(Error::MissingQuantParams(_))));
    }

    #[test]
    fn compare_examples() {
        let a = hwc("a", 1, 2, 1, vec![1.0, -2.0]);
        let c = compare_outputs(&a, &a).unwrap();
        assert!(c.bitwise_equal);
        assert_eq!(c.max_abs, 0.0);
        let b = hwc("b", 2, 1, 1, vec![1.0, -2.0]);
        assert!(compare_outputs(&a, &b).is_err());
    }

    #[test]
    fn dequantised_vs_float_within_half_step() {
        let s = 0.01f64;
        // every code centre plus a sub-step offset, and one saturating value
        let mut data: Vec<f32> = (-127..=127).map(|c| (c as f64 * s + 0.3 * s) as f32).collect();
        data.push(2.0);
        let n = data.len();
        let a = Activation::new(TensorSpec::new("t", vec![n], Layout::Flat, DType::Float32).unwrap(), data.clone())
            .unwrap();
        let q = quantize(&a, QuantParams::new(s).unwrap());
        let cmp = compare_outputs(&a, &dequantize(&q)).unwrap();
        let saturation_residual = 2.0 - 127.0 * s;
        assert!(cmp.max_abs <= (s / 2.0).max(saturation_residual) + 1e-6);
    }
}
