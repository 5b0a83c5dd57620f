//! Post-training symmetric int8 quantisation.
//!
//! One scale per tensor, zero point fixed at 0, codes restricted to
//! `[-127, 127]`. Rounding is half away from zero throughout, which is what
//! [`f64::round`] does.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{exec_float_all, Activation};
use crate::graph::{DType, Graph, LayerKind, QuantWeights, TensorSpec};

pub const QMAX: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    /// Real value of one integer step.
    pub scale: f64,
}

impl QuantParams {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("quantisation scale must be positive, got {scale}")));
        }
        Ok(Self { scale })
    }

    pub const fn zero_point(&self) -> i32 {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub spec: TensorSpec,
    pub data: Vec<i8>,
    pub params: QuantParams,
}

/// Saturates an already-rounded value to the symmetric int8 range.
pub fn saturate(v: f64) -> i8 {
    v.clamp(-(QMAX as f64), QMAX as f64) as i8
}

/// `round_half_away_from_zero(x / scale)`, saturated.
pub fn quantize_value(x: f64, params: QuantParams) -> i8 {
    saturate((x / params.scale).round())
}

/// Scale that maps the largest magnitude onto code 127. An all-zero tensor
/// gets scale 1.
pub fn calibrate_scale(values: &[f32]) -> QuantParams {
    let max_abs = values.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    QuantParams { scale: if max_abs > 0.0 { max_abs / QMAX as f64 } else { 1.0 } }
}

pub fn quantize(t: &Activation, params: QuantParams) -> QuantizedTensor {
    QuantizedTensor {
        spec: TensorSpec { dtype: DType::Int8, ..t.spec.clone() },
        data: t.data.iter().map(|&x| quantize_value(x as f64, params)).collect(),
        params,
    }
}

pub fn dequantize(q: &QuantizedTensor) -> Activation {
    Activation {
        spec: TensorSpec { dtype: DType::Float32, ..q.spec.clone() },
        data: q.data.iter().map(|&v| (v as f64 * q.params.scale) as f32).collect(),
    }
}

/// Layers whose output takes the scale of their (first) input rather than a
/// calibrated one.
pub(crate) fn preserves_scale(kind: &LayerKind) -> bool {
    matches!(
        kind,
        LayerKind::Relu | LayerKind::MaxPool { .. } | LayerKind::UpsampleNearest { .. } | LayerKind::Identity
    )
}

/// Quantises every weighted layer and assigns activation scales calibrated
/// by max-abs over the float activations of `calibration`.
///
/// Kernels become int8 (exactly a quarter of the float32 payload); biases
/// become int32 at scale `s_in * s_w`.
pub fn quantize_graph(g: &Graph, calibration: &[BTreeMap<String, Activation>]) -> Result<Graph> {
    if calibration.is_empty() {
        return Err(Error::MissingCalibration);
    }
    if g.dtype() != DType::Float32 {
        return Err(Error::InvalidArgument("graph is already quantised".into()));
    }
    let mut max_abs: BTreeMap<String, f64> = BTreeMap::new();
    for batch in calibration {
        for (name, act) in exec_float_all(g, batch)? {
            let m = act.data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
            let e = max_abs.entry(name).or_insert(0.0);
            *e = e.max(m);
        }
    }
    let params_for = |m: f64| QuantParams { scale: if m > 0.0 { m / QMAX as f64 } else { 1.0 } };

    let mut act: BTreeMap<String, QuantParams> = BTreeMap::new();
    for input in g.inputs() {
        act.insert(input.name.clone(), params_for(max_abs[&input.name]));
    }
    let mut nodes = g.nodes().to_vec();
    for idx in g.topo_indices()? {
        let node = &mut nodes[idx];
        let in_params = act[&node.inputs[0]];
        let out_params = if preserves_scale(&node.kind) { in_params } else { params_for(max_abs[&node.output]) };
        if let Some(w) = &node.weights {
            let kernel_params = calibrate_scale(&w.kernel);
            let kernel: Vec<i8> = w.kernel.iter().map(|&x| quantize_value(x as f64, kernel_params)).collect();
            let bias_scale = in_params.scale * kernel_params.scale;
            let bias = w.bias.as_ref().map(|b| {
                b.iter()
                    .map(|&x| (x as f64 / bias_scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                    .collect::<Vec<_>>()
                    .into()
            });
            node.quant = Some(QuantWeights { kernel: kernel.into(), kernel_params, bias });
        }
        act.insert(node.output.clone(), out_params);
    }
    let mut q = g.clone();
    q.set_quantized(nodes, act);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, GraphInput, LayerNode, Layout, Resolution, Weights};
    use crate::memory::weight_footprint;

    fn act(data: Vec<f32>) -> Activation {
        let n = data.len();
        Activation { spec: TensorSpec::new("t", vec![n], Layout::Flat, DType::Float32).unwrap(), data }
    }

    #[test]
    fn calibrate_examples() {
        assert!((calibrate_scale(&[-1.0, 0.5, 1.0]).scale - 1.0 / 127.0).abs() < 1e-15);
        assert_eq!(calibrate_scale(&[0.0; 5]).scale, 1.0);
        assert_eq!(calibrate_scale(&[254.0]).scale, 2.0);
    }

    #[test]
    fn quantize_examples() {
        let p = QuantParams::new(1.0 / 127.0).unwrap();
        assert_eq!(quantize_value(1.0, p), 127);
        assert_eq!(quantize_value(0.0, p), 0);
        assert_eq!(quantize_value(-300.0, QuantParams::new(1.0).unwrap()), -127);
        // half away from zero
        assert_eq!(quantize_value(2.5, QuantParams::new(1.0).unwrap()), 3);
        assert_eq!(quantize_value(-2.5, QuantParams::new(1.0).unwrap()), -3);
    }

    #[test]
    fn dequantize_examples() {
        let spec = TensorSpec::new("q", vec![2], Layout::Flat, DType::Int8).unwrap();
        let q = QuantizedTensor { spec, data: vec![127, 0], params: QuantParams::new(1.0 / 127.0).unwrap() };
        let d = dequantize(&q);
        assert!((d.data[0] - 1.0).abs() < 1e-7);
        assert_eq!(d.data[1], 0.0);
    }

    #[test]
    fn round_trip_error_within_half_step_on_grid() {
        for &scale in &[1.0 / 127.0, 0.037, 0.5, 3.0] {
            let p = QuantParams::new(scale).unwrap();
            let lim = 127.0 * scale;
            let grid: Vec<f32> = (0..=20_000).map(|i| (-lim + 2.0 * lim * i as f64 / 20_000.0) as f32).collect();
            let q = quantize(&act(grid.clone()), p);
            let back = dequantize(&q);
            for (x, y) in grid.iter().zip(&back.data) {
                // float32 storage of the grid and the result adds at most a few ulps
                assert!(((x - y).abs() as f64) <= scale / 2.0 + 1e-6 * lim, "x={x} y={y} s={scale}");
            }
        }
    }

    #[test]
    fn dequantised_error_over_all_codes() {
        // every int8 code, probed at its centre and both half-step edges
        let s = 0.25f64;
        let p = QuantParams::new(s).unwrap();
        for code in -127i32..=127 {
            for off in [-0.499, 0.0, 0.499] {
                let x = (code as f64 + off) * s;
                let err = (x - quantize_value(x, p) as f64 * s).abs();
                assert!(err <= s / 2.0 + 1e-12);
            }
        }
        // saturation residual beyond the representable range
        let x = 40.0;
        let err = (x - quantize_value(x, p) as f64 * s).abs();
        assert!((err - (x - 127.0 * s)).abs() < 1e-12);
    }

    #[test]
    fn finer_scale_gives_smaller_error() {
        // fixed inputs inside the range of the finest scale tried
        let x: Vec<f32> = (0..1000).map(|i| ((i as f32 * 0.618_034).fract() - 0.5) * 2.0).collect();
        let base = calibrate_scale(&x).scale;
        let err = |s: f64| {
            let d = dequantize(&quantize(&act(x.clone()), QuantParams::new(s).unwrap()));
            x.iter().zip(&d.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max)
        };
        let errs: Vec<f32> = [8.0, 4.0, 2.0, 1.0].iter().map(|m| err(base * m)).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    fn dense_graph(inputs: usize, outputs: usize) -> Graph {
        let kernel = (0..inputs * outputs).map(|i| (i as f32 * 0.37).sin()).collect();
        let node = LayerNode::new("fc", LayerKind::Dense { out_features: outputs }, vec!["x".into()], "y")
            .with_weights(Weights::new(kernel, Some(vec![0.1; outputs])));
        let g = Graph::new(vec![GraphInput::fixed("x", vec![inputs])], vec![node], vec!["y".into()]).unwrap();
        infer_shapes(&g, Resolution::new(1, 1)).unwrap()
    }

    #[test]
    fn weight_payload_shrinks_by_four() {
        // 250,000 float32 weights = 1,000,000 bytes
        let g = dense_graph(500, 500);
        let calib = BTreeMap::from([("x".to_string(), act(vec![0.5; 500]))]);
        let q = quantize_graph(&g, &[calib]).unwrap();
        let f = weight_footprint(&g);
        let i = weight_footprint(&q);
        assert_eq!(f.kernel_bytes, 1_000_000);
        assert_eq!(i.kernel_bytes, 250_000);
        assert_eq!(i.bias_bytes, f.bias_bytes);
        assert_eq!(q.node("fc").unwrap().quant.as_ref().unwrap().kernel.len(), 250_000);
    }

    #[test]
    fn zero_calibration_falls_back_to_unit_scale() {
        let g = dense_graph(3, 2);
        let calib = BTreeMap::from([("x".to_string(), act(vec![0.0; 3]))]);
        let q = quantize_graph(&g, &[calib]).unwrap();
        assert_eq!(q.activation_params()["x"].scale, 1.0);
    }

    #[test]
    fn weightless_graph_gains_scales_only() {
        let g = Graph::new(
            vec![GraphInput::fixed("x", vec![4])],
            vec![LayerNode::new("r", LayerKind::Relu, vec!["x".into()], "y")],
            vec!["y".into()],
        )
        .unwrap();
        let g = infer_shapes(&g, Resolution::new(1, 1)).unwrap();
        let calib = BTreeMap::from([("x".to_string(), act(vec![-2.0, 1.0, 0.5, 2.0]))]);
        let q = quantize_graph(&g, &[calib]).unwrap();
        assert_eq!(weight_footprint(&q).total(), 0);
        assert!((q.activation_params()["y"].scale - 2.0 / 127.0).abs() < 1e-15);
    }

    #[test]
    fn missing_calibration_is_an_error() {
        assert!(matches!(quantize_graph(&dense_graph(2, 2), &[]), Err(Error::MissingCalibration)));
    }
}
