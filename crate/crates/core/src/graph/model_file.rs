//! JSON model description documents.
//!
//! ```json
//! {
//!   "inputs":  [{"name": "image", "channels": 4, "layout": "HWC"}],
//!   "nodes":   [{"id": "conv1", "kind": "conv2d",
//!                "params": {"k_h": 3, "k_w": 3, "stride": 1, "pad": 1, "out_channels": 8},
//!                "inputs": ["image"], "output": "c1",
//!                "weights": "conv1.w.etns", "bias": "conv1.b.etns"}],
//!   "outputs": ["c1"]
//! }
//! ```
//!
//! `weights` / `bias` are either a path to an ETNS sidecar (relative to the
//! model file) or an inline `{"dims": [...], "data": [...]}` object.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Graph, GraphInput, InputShape, LayerKind, LayerNode, Layout, Weights};
use crate::error::{Error, Result};
use crate::tensor_file::{TensorData, TensorFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightRef {
    File(String),
    Inline { dims: Vec<u32>, data: Vec<f32> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    inputs: Vec<InputDoc>,
    nodes: Vec<NodeDoc>,
    outputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    name: String,
    channels: usize,
    layout: Layout,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    params: Value,
    inputs: Vec<String>,
    output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<WeightRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<WeightRef>,
}

fn parse_err(path: impl Into<String>, message: impl ToString) -> Error {
    Error::Parse { path: path.into(), message: message.to_string() }
}

fn parse_kind(kind: &str, params: &Value, path: &str) -> Result<LayerKind> {
    let unit = matches!(kind, "relu" | "add" | "identity");
    let known = unit || matches!(kind, "conv2d" | "dense" | "maxpool" | "avgpool" | "upsample_nearest" | "concat");
    if !known {
        return Err(Error::UnknownLayerKind(kind.to_string()));
    }
    let tagged = if unit {
        if !(params.is_null() || params.as_object().is_some_and(|o| o.is_empty())) {
            return Err(parse_err(format!("{path}.params"), format!("`{kind}` takes no parameters")));
        }
        Value::String(kind.to_string())
    } else {
        let mut obj = serde_json::Map::new();
        obj.insert(kind.to_string(), params.clone());
        Value::Object(obj)
    };
    serde_json::from_value(tagged).map_err(|e| parse_err(format!("{path}.params"), e))
}

/// Parses a model document whose weights are all inline.
pub fn load_graph(text: &str) -> Result<Graph> {
    load_graph_with(text, |path| {
        Err(Error::InvalidArgument(format!("weight file `{path}` referenced but no directory to resolve it against")))
    })
}

/// Parses a model document, resolving sidecar weight references with
/// `resolve`.
pub fn load_graph_with(text: &str, mut resolve: impl FnMut(&str) -> Result<TensorFile>) -> Result<Graph> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let path = format!("{} (line {}, column {})", e.path(), inner.line(), inner.column());
        parse_err(path, inner)
    })?;

    let inputs = doc
        .inputs
        .into_iter()
        .map(|i| GraphInput {
            shape: match i.layout {
                Layout::Flat => InputShape::Fixed(vec![i.channels]),
                _ => InputShape::Spatial { channels: i.channels },
            },
            name: i.name,
            layout: i.layout,
        })
        .collect();

    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for (idx, nd) in doc.nodes.into_iter().enumerate() {
        let path = format!("nodes[{idx}]");
        let kind = parse_kind(&nd.kind, &nd.params, &path)?;
        let mut load = |r: &WeightRef, field: &str| -> Result<(Vec<u32>, Vec<f32>)> {
            match r {
                WeightRef::Inline { dims, data } => {
                    let t = TensorFile::float32(dims.clone(), data.clone())
                        .map_err(|e| parse_err(format!("{path}.{field}"), e))?;
                    Ok((t.dims, data.clone()))
                }
                WeightRef::File(p) => match resolve(p)? {
                    TensorFile { dims, data: TensorData::Float32(v) } => Ok((dims, v)),
                    other => Err(parse_err(
                        format!("{path}.{field}"),
                        format!("weight file `{p}` holds {} data, expected float32", other.data.dtype()),
                    )),
                },
            }
        };
        let kernel = nd.weights.as_ref().map(|r| load(r, "weights")).transpose()?;
        let bias = nd.bias.as_ref().map(|r| load(r, "bias")).transpose()?;
        if let (Some((dims, _)), LayerKind::Conv2d { k_h, k_w, out_channels, .. }) = (&kernel, kind) {
            let ok = dims.len() == 4
                && dims[0] as usize == out_channels
                && dims[1] as usize == k_h
                && dims[2] as usize == k_w;
            if !ok {
                return Err(parse_err(
                    format!("{path}.weights"),
                    format!("conv kernel dims {dims:?} are not [{out_channels}, {k_h}, {k_w}, in]"),
                ));
            }
        }
        if let (Some((dims, _)), LayerKind::Dense { out_features }) = (&kernel, kind) {
            if dims.len() != 2 || dims[0] as usize != out_features {
                return Err(parse_err(
                    format!("{path}.weights"),
                    format!("dense kernel dims {dims:?} are not [{out_features}, in]"),
                ));
            }
        }
        if bias.is_some() && kernel.is_none() {
            return Err(parse_err(format!("{path}.bias"), "bias given without weights"));
        }
        let mut node = LayerNode::new(nd.id, kind, nd.inputs, nd.output);
        if let Some((_, k)) = kernel {
            node.weights = Some(Weights::new(k, bias.map(|(_, b)| b)));
        }
        nodes.push(node);
    }
    Graph::new(inputs, nodes, doc.outputs)
}

/// Loads a model file, resolving sidecar weights relative to its directory.
pub fn load_model(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    load_graph_with(&text, |rel| TensorFile::read(&dir.join(rel)))
}

fn kernel_dims(node: &LayerNode) -> Vec<u32> {
    let w = node.weights.as_ref().expect("weighted node");
    match node.kind {
        LayerKind::Conv2d { k_h, k_w, out_channels, .. } => {
            let cin = w.kernel.len() / (out_channels * k_h * k_w);
            vec![out_channels as u32, k_h as u32, k_w as u32, cin as u32]
        }
        LayerKind::Dense { out_features } => vec![out_features as u32, (w.kernel.len() / out_features) as u32],
        _ => unreachable!("only conv2d and dense carry weights"),
    }
}

/// Writes `<dir>/<stem>.json` plus one ETNS sidecar per weight and bias
/// tensor. Only float32 weights are stored; quantised payloads are
/// recomputed by the quantiser.
pub fn save_model(g: &Graph, dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let inputs = g
        .inputs()
        .iter()
        .map(|i| {
            let channels = match &i.shape {
                InputShape::Spatial { channels } => Ok(*channels),
                InputShape::Fixed(d) if d.len() == 1 => Ok(d[0]),
                InputShape::Fixed(d) => Err(Error::InvalidArgument(format!(
                    "input `{}` has fixed dims {d:?}, which the model format cannot express",
                    i.name
                ))),
            }?;
            Ok(InputDoc { name: i.name.clone(), channels, layout: i.layout })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut nodes = Vec::new();
    for n in g.nodes() {
        let params = match serde_json::to_value(n.kind)? {
            Value::Object(mut o) => o.remove(n.kind.name()).unwrap_or(Value::Null),
            _ => Value::Null,
        };
        let (mut weights, mut bias) = (None, None);
        if let Some(w) = &n.weights {
            let wname = format!("{stem}.{}.w.etns", n.id);
            TensorFile::float32(kernel_dims(n), w.kernel.to_vec())?.write(&dir.join(&wname))?;
            weights = Some(WeightRef::File(wname));
            if let Some(b) = &w.bias {
                let bname = format!("{stem}.{}.b.etns", n.id);
                TensorFile::float32(vec![b.len() as u32], b.to_vec())?.write(&dir.join(&bname))?;
                bias = Some(WeightRef::File(bname));
            }
        }
        nodes.push(NodeDoc {
            id: n.id.clone(),
            kind: n.kind.name().to_string(),
            params,
            inputs: n.inputs.clone(),
            output: n.output.clone(),
            weights,
            bias,
        });
    }
    let doc = ModelDoc { inputs, nodes, outputs: g.outputs().to_vec() };
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::topo_order;

    const CHAIN: &str = r#"{
      "inputs": [{"name": "x", "channels": 2, "layout": "HWC"}],
      "nodes": [
        {"id": "conv", "kind": "conv2d",
         "params": {"k_h": 1, "k_w": 1, "stride": 1, "pad": 0, "out_channels": 1},
         "inputs": ["x"], "output": "c", "weights": {"dims": [1, 1, 1, 2], "data": [1.0, -1.0]}},
        {"id": "relu", "kind": "relu", "inputs": ["c"], "output": "r"},
        {"id": "dense", "kind": "dense", "params": {"out_features": 2},
         "inputs": ["r"], "output": "y", "weights": {"dims": [2, 1], "data": [0.5, 2.0]},
         "bias": {"dims": [2], "data": [0.0, 1.0]}}
      ],
      "outputs": ["y"]
    }"#;

    #[test]
    fn loads_three_node_chain() {
        let g = load_graph(CHAIN).unwrap();
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(topo_order(&g), ["conv", "relu", "dense"]);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let text = CHAIN.replace("\"relu\", \"inputs\"", "\"softmax\", \"inputs\"");
        assert!(matches!(load_graph(&text), Err(Error::UnknownLayerKind(k)) if k == "softmax"));
    }

    #[test]
    fn dangling_tensor_is_named() {
        let text = CHAIN.replace("\"inputs\": [\"c\"]", "\"inputs\": [\"x9\"]");
        assert!(matches!(load_graph(&text), Err(Error::DanglingTensor { tensor, .. }) if tensor == "x9"));
    }

    #[test]
    fn cycle_is_rejected() {
        let text = r#"{
          "inputs": [{"name": "x", "channels": 1, "layout": "HWC"}],
          "nodes": [
            {"id": "a", "kind": "add", "inputs": ["x", "b_out"], "output": "a_out"},
            {"id": "b", "kind": "relu", "inputs": ["a_out"], "output": "b_out"}
          ],
          "outputs": ["b_out"]
        }"#;
        assert!(matches!(load_graph(text), Err(Error::Cycle(_))));
    }

    #[test]
    fn parse_errors_carry_a_path() {
        let text = CHAIN.replace("\"k_h\": 1", "\"k_h\": \"one\"");
        match load_graph(&text) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "nodes[0].params"),
            other => panic!("unexpected {other:?}"),
        }
        let text = CHAIN.replace("\"output\": \"r\"", "\"outptu\": \"r\"");
        match load_graph(&text) {
            Err(Error::Parse { path, .. }) => assert!(path.starts_with("nodes[1]"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_and_reload_with_sidecars() {
        let g = load_graph(CHAIN).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = save_model(&g, dir.path(), "chain").unwrap();
        assert!(dir.path().join("chain.dense.b.etns").exists());
        let back = load_model(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn missing_model_file_names_the_path() {
        let err = load_model(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.json"));
    }
}
