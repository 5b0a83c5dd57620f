//! Seeded random graphs for property tests and examples.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{infer_shapes, Graph, GraphInput, LayerKind, LayerNode, Resolution, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub max_nodes: usize,
    /// Spatial extent range of the inputs, inclusive.
    pub min_extent: usize,
    pub max_extent: usize,
    pub max_channels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { max_nodes: 12, min_extent: 3, max_extent: 7, max_channels: 4 }
    }
}

#[derive(Clone)]
struct Avail {
    name: String,
    h: usize,
    w: usize,
    c: usize,
}

fn random_weights(rng: &mut impl Rng, len: usize, out: usize) -> Weights {
    let kernel = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let bias = rng.random_bool(0.7).then(|| (0..out).map(|_| rng.random_range(-0.5f32..0.5)).collect());
    Weights::new(kernel, bias)
}

/// A shaped random DAG over every layer kind, with 1 to `max_nodes` nodes
/// and one or two spatial inputs.
pub fn random_graph(seed: u64, cfg: &SynthConfig) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = Resolution::new(
        rng.random_range(cfg.min_extent..=cfg.max_extent),
        rng.random_range(cfg.min_extent..=cfg.max_extent),
    );
    let n_inputs = rng.random_range(1..=2);
    let mut inputs = Vec::new();
    let mut avail: Vec<Avail> = Vec::new();
    for i in 0..n_inputs {
        let c = rng.random_range(1..=cfg.max_channels);
        let name = format!("in{i}");
        inputs.push(GraphInput::spatial(name.clone(), c));
        avail.push(Avail { name, h: res.height, w: res.width, c });
    }
    let target = rng.random_range(1..=cfg.max_nodes);
    let mut nodes: Vec<LayerNode> = Vec::new();
    let mut consumed = std::collections::HashSet::new();
    let mut attempts = 0;
    while nodes.len() < target && attempts < 50 * cfg.max_nodes {
        attempts += 1;
        let id = format!("n{:03}", nodes.len());
        // feed every input before anything else
        let src =
            if nodes.len() < n_inputs { avail[nodes.len()].clone() } else { avail.choose(&mut rng).unwrap().clone() };
        let choice = rng.random_range(0..9);
        let (kind, ins, h, w, c, weights) = match choice {
            0 => {
                let k = rng.random_range(1..=3usize);
                let stride = rng.random_range(1..=2usize);
                let pad = rng.random_range(0..=k / 2);
                if src.h + 2 * pad < k || src.w + 2 * pad < k {
                    continue;
                }
                let out = rng.random_range(1..=cfg.max_channels);
                let h = (src.h + 2 * pad - k) / stride + 1;
                let w = (src.w + 2 * pad - k) / stride + 1;
                let wts = random_weights(&mut rng, out * k * k * src.c, out);
                (
                    LayerKind::Conv2d { k_h: k, k_w: k, stride, pad, out_channels: out },
                    vec![src.name],
                    h,
                    w,
                    out,
                    Some(wts),
                )
            }
            1 => {
                let out = rng.random_range(1..=cfg.max_channels);
                let wts = random_weights(&mut rng, out * src.c, out);
                (LayerKind::Dense { out_features: out }, vec![src.name], src.h, src.w, out, Some(wts))
            }
            2 => (LayerKind::Relu, vec![src.name], src.h, src.w, src.c, None),
            3 | 4 => {
                let k = rng.random_range(1..=2usize);
                let stride = rng.random_range(1..=2usize);
                if src.h < k || src.w < k {
                    continue;
                }
                let kind =
                    if choice == 3 { LayerKind::MaxPool { k, stride } } else { LayerKind::AvgPool { k, stride } };
                (kind, vec![src.name], (src.h - k) / stride + 1, (src.w - k) / stride + 1, src.c, None)
            }
            5 => {
                if src.h * src.w > 36 {
                    continue;
                }
                (LayerKind::UpsampleNearest { factor: 2 }, vec![src.name], src.h * 2, src.w * 2, src.c, None)
            }
            6 => {
                let partners: Vec<&Avail> = avail.iter().filter(|a| (a.h, a.w, a.c) == (src.h, src.w, src.c)).collect();
                let other = partners.choose(&mut rng).unwrap().name.clone();
                (LayerKind::Add, vec![src.name, other], src.h, src.w, src.c, None)
            }
            7 => {
                let axis = rng.random_range(0..3usize);
                let partners: Vec<&Avail> = avail
                    .iter()
                    .filter(|a| match axis {
                        0 => a.w == src.w && a.c == src.c,
                        1 => a.h == src.h && a.c == src.c,
                        _ => a.h == src.h && a.w == src.w,
                    })
                    .collect();
                let other = (*partners.choose(&mut rng).unwrap()).clone();
                let (h, w, c) = match axis {
                    0 => (src.h + other.h, src.w, src.c),
                    1 => (src.h, src.w + other.w, src.c),
                    _ => (src.h, src.w, src.c + other.c),
                };
                (LayerKind::Concat { axis }, vec![src.name, other.name], h, w, c, None)
            }
            _ => (LayerKind::Identity, vec![src.name], src.h, src.w, src.c, None),
        };
        for t in &ins {
            consumed.insert(t.clone());
        }
        let mut node = LayerNode::new(id.clone(), kind, ins, id.clone());
        node.weights = weights;
        nodes.push(node);
        avail.push(Avail { name: id, h, w, c });
    }
    let outputs: Vec<String> = nodes.iter().map(|n| n.output.clone()).filter(|t| !consumed.contains(t)).collect();
    let g = Graph::new(inputs, nodes, outputs).expect("generated graph is valid");
    infer_shapes(&g, res).expect("generated graph shapes")
}

/// An unshaped chain of stride-1 same-padded convolutions (optionally
/// interleaved with relu) that keeps `channels` channels throughout.
pub fn conv_chain(seed: u64, channels: usize, depth: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut prev = "x".to_string();
    for i in 0..depth {
        let id = format!("n{i:03}");
        let kind = if i % 2 == 1 && rng.random_bool(0.5) {
            LayerKind::Relu
        } else {
            let k = [1usize, 3, 5][rng.random_range(0..3)];
            LayerKind::Conv2d { k_h: k, k_w: k, stride: 1, pad: k / 2, out_channels: channels }
        };
        let mut node = LayerNode::new(id.clone(), kind, vec![prev], id.clone());
        if let LayerKind::Conv2d { k_h, k_w, .. } = kind {
            node.weights = Some(random_weights(&mut rng, channels * k_h * k_w * channels, channels));
        }
        nodes.push(node);
        prev = id;
    }
    Graph::new(vec![GraphInput::spatial("x", channels)], nodes, vec![prev]).expect("chain is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic_and_valid() {
        for seed in 0..200 {
            let a = random_graph(seed, &SynthConfig::default());
            assert_eq!(a, random_graph(seed, &SynthConfig::default()));
            assert!(!a.nodes().is_empty() && a.nodes().len() <= 12);
        }
    }
}
