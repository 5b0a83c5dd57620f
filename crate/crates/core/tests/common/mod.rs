#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mcuplan::executor::Activation;
use mcuplan::graph::{infer_shapes, Graph, GraphInput, LayerKind, LayerNode, Layout, Resolution, TensorSpec, Weights};
use mcuplan::quantizer::QuantizedTensor;
use mcuplan::DType;
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Materialises the live set at every step and returns the largest total.
pub fn brute_force_peak(g: &Graph, schedule: &[String]) -> u64 {
    let step_of: BTreeMap<&str, usize> = schedule.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let last = schedule.len() - 1;
    let mut peak = 0;
    for step in 0..=last {
        let mut live: BTreeSet<&str> = BTreeSet::new();
        // every tensor: graph inputs are born at step 0, node outputs at
        // their producer's step
        let born: Vec<(&str, usize)> = g
            .inputs()
            .iter()
            .map(|i| (i.name.as_str(), 0))
            .chain(g.nodes().iter().map(|n| (n.output.as_str(), step_of[n.id.as_str()])))
            .collect();
        for (name, birth) in born {
            if birth > step {
                continue;
            }
            let is_output = g.outputs().iter().any(|o| o == name);
            let used_later_or_now =
                g.nodes().iter().any(|n| n.inputs.iter().any(|t| t == name) && step_of[n.id.as_str()] >= step);
            if is_output || used_later_or_now || birth == step {
                live.insert(name);
            }
        }
        let total: u64 = live.iter().map(|t| g.tensor(t).unwrap().byte_size()).sum();
        peak = peak.max(total);
    }
    peak
}

fn big_to_f64(v: &BigInt) -> f64 {
    let small = i64::try_from(v).expect("accumulator fits i64");
    assert!(small.unsigned_abs() < 1 << 53);
    small as f64
}

fn requant(acc: &BigInt, mult: f64) -> i8 {
    assert!(*acc >= BigInt::from(i32::MIN) && *acc <= BigInt::from(i32::MAX), "accumulator leaves int32");
    let v = (big_to_f64(acc) * mult).round();
    v.clamp(-127.0, 127.0) as i8
}

/// Naive conv / dense over arbitrary-precision integers, HWC input and
/// OHWI kernel, zero padding.
pub fn int8_layer_oracle(q: &Graph, input: &QuantizedTensor) -> Vec<i8> {
    let node = &q.nodes()[0];
    let qw = node.quant.as_ref().expect("quantised");
    let s_out = q.activation_params()[&node.output].scale;
    let mult = input.params.scale * qw.kernel_params.scale / s_out;
    let bias = |o: usize| qw.bias.as_ref().map_or(BigInt::from(0), |b| BigInt::from(b[o]));
    let mut out = Vec::new();
    match node.kind {
        LayerKind::Conv2d { k_h, k_w, stride, pad, out_channels } => {
            let (h, w, c) = (input.spec.dims[0], input.spec.dims[1], input.spec.dims[2]);
            let oh = (h + 2 * pad - k_h) / stride + 1;
            let ow = (w + 2 * pad - k_w) / stride + 1;
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..out_channels {
                        let mut acc = bias(oc);
                        for ky in 0..k_h {
                            for kx in 0..k_w {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                for ic in 0..c {
                                    let xv = input.data[(iy as usize * w + ix as usize) * c + ic];
                                    let wv = qw.kernel[((oc * k_h + ky) * k_w + kx) * c + ic];
                                    acc += BigInt::from(xv) * BigInt::from(wv);
                                }
                            }
                        }
                        out.push(requant(&acc, mult));
                    }
                }
            }
        }
        LayerKind::Dense { out_features } => {
            let inner = *input.spec.dims.last().unwrap();
            for row in input.data.chunks(inner) {
                for o in 0..out_features {
                    let mut acc = bias(o);
                    for (i, &xv) in row.iter().enumerate() {
                        acc += BigInt::from(xv) * BigInt::from(qw.kernel[o * inner + i]);
                    }
                    out.push(requant(&acc, mult));
                }
            }
        }
        _ => unreachable!("oracle covers weighted layers only"),
    }
    out
}

/// A single random conv or dense layer over a small spatial input, shaped,
/// plus one float input batch for it.
pub fn random_layer(seed: u64) -> (Graph, BTreeMap<String, Activation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..=6);
    let w = rng.random_range(1..=6);
    let c = rng.random_range(1..=4);
    let node = if rng.random_bool(0.6) {
        let k_h = rng.random_range(1..=3.min(h + 2));
        let k_w = rng.random_range(1..=3.min(w + 2));
        let k_h = k_h.min(h + 2);
        let pad = rng.random_range(0..=1);
        let stride = rng.random_range(1..=2);
        let (k_h, k_w) = (k_h.min(h + 2 * pad), k_w.min(w + 2 * pad));
        let out = rng.random_range(1..=4);
        let kernel = (0..out * k_h * k_w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let bias = (0..out).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        LayerNode::new("layer", LayerKind::Conv2d { k_h, k_w, stride, pad, out_channels: out }, vec!["x".into()], "y")
            .with_weights(Weights::new(kernel, Some(bias)))
    } else {
        let out = rng.random_range(1..=5);
        let kernel = (0..out * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let bias = rng.random_bool(0.5).then(|| (0..out).map(|_| rng.random_range(-0.5f32..0.5)).collect());
        LayerNode::new("layer", LayerKind::Dense { out_features: out }, vec!["x".into()], "y")
            .with_weights(Weights::new(kernel, bias))
    };
    let g = Graph::new(vec![GraphInput::spatial("x", c)], vec![node], vec!["y".into()]).unwrap();
    let g = infer_shapes(&g, Resolution::new(h, w)).unwrap();
    let data = (0..h * w * c).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    let spec = TensorSpec::new("x", vec![h, w, c], Layout::Hwc, DType::Float32).unwrap();
    let inputs = BTreeMap::from([("x".to_string(), Activation::new(spec, data).unwrap())]);
    (g, inputs)
}

/// Published reference outputs of the AS R94 Shapiro–Wilk routine:
/// (name, data, W, p).
pub fn shapiro_wilk_references() -> Vec<(&'static str, Vec<f64>, f64, f64)> {
    let normal = statrs_free_ppf_vector(50);
    vec![
        ("n3", vec![1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
        ("n5", vec![2.1, 3.4, 1.9, 5.6, 4.4], 0.9320849391953863, 0.6106559022604845),
        (
            "n10",
            vec![148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0],
            0.9080491141028906,
            0.2678575575376505,
        ),
        (
            "n11",
            vec![6.0, 1.0, -4.0, 8.0, -2.0, 5.0, 0.0, 3.5, 7.25, -1.5, 2.0],
            0.9621582252445828,
            0.7982999506549235,
        ),
        (
            "n20",
            vec![
                65.0, 61.0, 63.0, 86.0, 70.0, 55.0, 74.0, 35.0, 72.0, 68.0, 45.0, 58.0, 67.0, 68.0, 81.0, 75.0, 61.0,
                63.0, 70.0, 62.0,
            ],
            0.9473329319860018,
            0.3284119713282536,
        ),
        ("q50", normal, 0.9984740698028733, 0.999999990349777),
        (
            "sq100",
            (1..=100).map(|i| ((i * 37 % 101) as f64 / 101.0).powi(2)).collect(),
            0.8961800544117464,
            9.390245788563606e-07,
        ),
        ("lin200", (1..=200).map(f64::from).collect(), 0.9546116147545176, 5.392061439949803e-06),
    ]
}

/// Standard-normal quantiles at `(i − 0.375)/(n + 0.25)`, by bisection on
/// an erf-free series so the vector does not depend on the code under test.
pub fn statrs_free_ppf_vector(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            let p = (i as f64 - 0.375) / (n as f64 + 0.25);
            let (mut lo, mut hi) = (-10.0f64, 10.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if normal_cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Φ(x) via the Taylor series of the error function (accurate to ~1e-15
/// over |x| ≤ 10 with enough terms) and its complement for large |x|.
fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    if z.abs() < 3.0 {
        // erf(z) = 2/√π Σ (−1)^n z^(2n+1) / (n! (2n+1))
        let mut term = z;
        let mut sum = z;
        for n in 1..200 {
            term *= -z * z / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
    } else {
        // continued fraction for erfc
        let az = z.abs();
        let mut f = 0.0;
        for k in (1..=60).rev() {
            f = (k as f64 / 2.0) / (az + f);
        }
        let erfc = (-az * az).exp() / std::f64::consts::PI.sqrt() / (az + f);
        if z > 0.0 {
            1.0 - 0.5 * erfc
        } else {
            0.5 * erfc
        }
    }
}
