use crate::error::{invalid, Error, Result};
use crate::numerics::{LayerOp, Params};

use super::{resolve_specs, Layer, ModelGraph};

/// Keep only filters `kept` of layer `id`, dropping the matching input
/// channels of the next parameterized layer.
///
/// A linear successor behind a flatten loses the whole `H'·W'` block of
/// columns belonging to each dropped channel. The returned graph is
/// shape-valid; `graph` is untouched.
pub fn remove_output_channels(graph: &ModelGraph, id: &str, kept: &[usize]) -> Result<ModelGraph> {
    let idx = graph
        .layer_index(id)
        .ok_or_else(|| Error::InvalidArgument(format!("no layer `{id}`")))?;
    remove_output_channels_at(graph, idx, kept)
}

pub(crate) fn remove_output_channels_at(
    graph: &ModelGraph,
    idx: usize,
    kept: &[usize],
) -> Result<ModelGraph> {
    let layer = &graph.layers()[idx];
    if !layer.spec.is_conv() {
        return invalid(format!("layer `{}` is not a convolution", layer.spec.id));
    }
    let n = layer.spec.c_out;
    if kept.is_empty() {
        return invalid(format!(
            "layer `{}`: at least one filter per layer must be kept",
            layer.spec.id
        ));
    }
    if kept.windows(2).any(|w| w[0] >= w[1]) || kept[kept.len() - 1] >= n {
        return invalid(format!(
            "layer `{}`: kept indices must be sorted, unique and below {n}",
            layer.spec.id
        ));
    }
    if kept.len() == n {
        return Ok(graph.clone());
    }

    let mut layers: Vec<Layer> = graph.layers().to_vec();
    {
        let p = layers[idx].params.as_ref().expect("conv has params");
        layers[idx].params = Some(Params {
            weight: p.weight.gather_outer(kept)?,
            bias: p.bias.gather_outer(kept)?,
        });
    }
    if let Some(succ) = graph.successor_of(idx) {
        let p = layers[succ].params.as_ref().expect("successor has params");
        let weight = match layers[succ].spec.op {
            LayerOp::Conv { .. } => p.weight.gather_axis1(kept)?,
            LayerOp::Linear => {
                let spatial = graph.layers()[idx + 1..succ]
                    .iter()
                    .find(|l| l.spec.op == LayerOp::Flatten)
                    .map(|l| l.spec.in_hw.0 * l.spec.in_hw.1)
                    .unwrap_or(1);
                let cols: Vec<usize> = kept
                    .iter()
                    .flat_map(|&c| c * spatial..(c + 1) * spatial)
                    .collect();
                p.weight.gather_axis1(&cols)?
            }
            _ => unreachable!("only conv and linear carry parameters"),
        };
        layers[succ].params = Some(Params {
            weight,
            bias: p.bias.clone(),
        });
    }

    let mut decls = graph.blueprint();
    decls[idx].width = kept.len();
    let specs = resolve_specs(graph.input_shape(), &decls)?;
    for (l, s) in layers.iter_mut().zip(specs) {
        l.spec = s;
    }
    ModelGraph::from_layers(graph.input_shape(), layers)
}
