use std::collections::BTreeMap;

use super::{Graph, InputShape, LayerKind, LayerNode, Layout, Resolution, TensorSpec};
use crate::error::{Error, Result};

/// Binds `res` to every spatial graph input and resolves all tensor shapes.
///
/// Convolution output extents follow `floor((in + 2·pad − k) / stride) + 1`;
/// pooling uses the same rule without padding. Any extent below one is an
/// error.
pub fn infer_shapes(g: &Graph, res: Resolution) -> Result<Graph> {
    if res.height == 0 || res.width == 0 {
        return Err(Error::InvalidArgument(format!("resolution {res} must be positive")));
    }
    let dtype = g.dtype;
    let mut shapes: BTreeMap<String, TensorSpec> = BTreeMap::new();
    for input in &g.inputs {
        let dims = match &input.shape {
            InputShape::Spatial { channels } => vec![res.height, res.width, *channels],
            InputShape::Fixed(dims) => dims.clone(),
        };
        let layout = if dims.len() == 3 { Layout::Hwc } else { Layout::Flat };
        shapes.insert(input.name.clone(), TensorSpec::new(input.name.clone(), dims, layout, dtype)?);
    }

    for idx in g.topo_indices()? {
        let node = &g.nodes[idx];
        let ins: Vec<&TensorSpec> = node.inputs.iter().map(|t| &shapes[t]).collect();
        let dims = output_dims(node, &ins)?;
        let layout = if dims.len() == 3 { Layout::Hwc } else { Layout::Flat };
        let spec = TensorSpec::new(node.output.clone(), dims, layout, dtype)?;
        shapes.insert(node.output.clone(), spec);
    }

    let mut out = g.clone();
    out.shapes = Some(shapes);
    out.resolution = Some(res);
    Ok(out)
}

fn spatial(node: &LayerNode, t: &TensorSpec) -> Result<(usize, usize, usize)> {
    t.hwc().ok_or_else(|| {
        Error::ShapeMismatch(format!(
            "node `{}` ({}) needs a rank-3 input, `{}` has dims {:?}",
            node.id,
            node.kind.name(),
            t.name,
            t.dims
        ))
    })
}

fn window_extent(node: &LayerNode, input: i64, pad: i64, k: i64, stride: i64) -> Result<usize> {
    let out = (input + 2 * pad - k).div_euclid(stride) + 1;
    if out <= 0 {
        return Err(Error::NonPositiveExtent { tensor: node.output.clone(), node: node.id.clone() });
    }
    Ok(out as usize)
}

fn check_kernel_len(node: &LayerNode, expected: usize, bias_len: usize) -> Result<()> {
    let (kernel, bias) = match (&node.weights, &node.quant) {
        (_, Some(q)) => (q.kernel.len(), q.bias.as_ref().map(|b| b.len())),
        (Some(w), None) => (w.kernel.len(), w.bias.as_ref().map(|b| b.len())),
        (None, None) => return Err(Error::InvalidGraph(format!("node `{}` carries no weights", node.id))),
    };
    if kernel != expected {
        return Err(Error::ShapeMismatch(format!(
            "node `{}` kernel has {kernel} elements, expected {expected}",
            node.id
        )));
    }
    if let Some(b) = bias {
        if b != bias_len {
            return Err(Error::ShapeMismatch(format!("node `{}` bias has {b} elements, expected {bias_len}", node.id)));
        }
    }
    Ok(())
}

fn output_dims(node: &LayerNode, ins: &[&TensorSpec]) -> Result<Vec<usize>> {
    let first = ins[0];
    match node.kind {
        LayerKind::Conv2d { k_h, k_w, stride, pad, out_channels } => {
            let (h, w, c) = spatial(node, first)?;
            check_kernel_len(node, out_channels * k_h * k_w * c, out_channels)?;
            let oh = window_extent(node, h as i64, pad as i64, k_h as i64, stride as i64)?;
            let ow = window_extent(node, w as i64, pad as i64, k_w as i64, stride as i64)?;
            Ok(vec![oh, ow, out_channels])
        }
        LayerKind::Dense { out_features } => {
            let inner = *first.dims.last().expect("rank ≥ 1");
            check_kernel_len(node, out_features * inner, out_features)?;
            let mut dims = first.dims.clone();
            *dims.last_mut().unwrap() = out_features;
            Ok(dims)
        }
        LayerKind::MaxPool { k, stride } | LayerKind::AvgPool { k, stride } => {
            let (h, w, c) = spatial(node, first)?;
            let oh = window_extent(node, h as i64, 0, k as i64, stride as i64)?;
            let ow = window_extent(node, w as i64, 0, k as i64, stride as i64)?;
            Ok(vec![oh, ow, c])
        }
        LayerKind::UpsampleNearest { factor } => {
            let (h, w, c) = spatial(node, first)?;
            Ok(vec![h * factor, w * factor, c])
        }
        LayerKind::Relu | LayerKind::Identity => Ok(first.dims.clone()),
        LayerKind::Add => {
            for t in &ins[1..] {
                if t.dims != first.dims {
                    return Err(Error::ShapeMismatch(format!(
                        "add node `{}`: {:?} vs {:?}",
                        node.id, first.dims, t.dims
                    )));
                }
            }
            Ok(first.dims.clone())
        }
        LayerKind::Concat { axis } => {
            let rank = first.dims.len();
            if axis >= rank {
                return Err(Error::ShapeMismatch(format!(
                    "concat node `{}`: axis {axis} out of range for rank {rank}",
                    node.id
                )));
            }
            let mut dims = first.dims.clone();
            for t in &ins[1..] {
                let compatible = t.dims.len() == rank
                    && t.dims.iter().zip(&first.dims).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::ShapeMismatch(format!(
                        "concat node `{}`: {:?} vs {:?} along axis {axis}",
                        node.id, first.dims, t.dims
                    )));
                }
                dims[axis] += t.dims[axis];
            }
            Ok(dims)
        }
    }
}
