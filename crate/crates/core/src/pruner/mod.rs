//! L2-magnitude filter selection and least-squares weight reconstruction.

mod cache;
mod plan;

use log::debug;

use crate::error::{invalid, Error, Result};
use crate::graph::{surgery_at, ModelGraph};
use crate::numerics::{
    least_squares_dual, solve_regularized, LayerOp, Matrix, Params, Tensor,
};

pub use cache::{build_calibration_cache, CacheEntry, CalibrationCache};
pub use plan::{canonical_ratio, read_plan, write_plan, SparsityPlan};

/// Default reconstruction ridge, relative to the mean diagonal of `XᵀX`.
pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Filter indices in ascending order of L2 norm; ties keep the lower index first.
pub fn rank_filters_l2(weight: &Tensor) -> Vec<usize> {
    let n = weight.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Vec::new();
    }
    let per = weight.len() / n;
    let norms: Vec<f64> = weight
        .data()
        .chunks(per)
        .map(|f| f.iter().map(|&v| v as f64 * v as f64).sum::<f64>())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));
    order
}

/// Number of filters left after removing a fraction `sparsity` of `n`:
/// `max(1, ⌈(1−a)·n⌉)`.
pub fn kept_count(n: usize, sparsity: f64) -> usize {
    (((1.0 - sparsity) * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Indices (sorted ascending) of the `kept_count` largest-norm filters.
pub fn select_kept(weight: &Tensor, sparsity: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&sparsity) {
        return invalid(format!("sparsity must lie in [0, 1), got {sparsity}"));
    }
    let ranked = rank_filters_l2(weight);
    let k = kept_count(ranked.len(), sparsity);
    let mut kept = ranked[ranked.len() - k..].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Refit result for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub params: Params,
    pub ridge_used: f64,
    pub fallback: bool,
    pub underdetermined: bool,
}

/// Columns of the cached design matrix that belong to `kept_in`, plus the
/// trailing bias column.
fn kept_columns(entry: &CacheEntry, kept_in: &[usize]) -> Vec<usize> {
    let block = entry.block;
    let mut cols: Vec<usize> = kept_in
        .iter()
        .flat_map(|&c| c * block..(c + 1) * block)
        .collect();
    cols.push(entry.c_in * block);
    cols
}

fn weights_to_params(entry: &CacheEntry, w: &Matrix, kept_in: usize, kept_out: usize) -> Result<Params> {
    // w is (P+1)×Q: rows follow kept columns, last row is the bias
    let p = w.rows - 1;
    let mut weight = Vec::with_capacity(kept_out * p);
    for o in 0..kept_out {
        for r in 0..p {
            weight.push(w.get(r, o) as f32);
        }
    }
    let bias = (0..kept_out).map(|o| w.get(p, o) as f32).collect();
    let shape = match entry.op {
        LayerOp::Conv { .. } => vec![kept_out, kept_in, entry.kernel.0, entry.kernel.1],
        _ => vec![kept_out, kept_in * entry.block],
    };
    Ok(Params {
        weight: Tensor::new(shape, weight)?,
        bias: Tensor::new(vec![kept_out], bias)?,
    })
}

/// Refit a layer so that its kept filters reproduce the cached original
/// outputs from the kept input channels only.
///
/// The bias is fit jointly through an all-ones column. `ridge` is relative:
/// the penalty added to the normal equations is `ridge·trace(XᵀX)/P`, so it
/// tracks the activation scale of the layer. The normal equations come from
/// the cached Gram matrix when the system is tall enough; for wide systems the
/// equivalent kernel form `Xᵀ(XXᵀ + λI)⁻¹Y` is solved instead.
pub fn reconstruct_layer(
    entry: &CacheEntry,
    kept_in: &[usize],
    kept_out: &[usize],
    ridge: f64,
) -> Result<Reconstruction> {
    if kept_in.is_empty() || kept_out.is_empty() {
        return invalid("reconstruction needs at least one kept input and output channel");
    }
    if kept_in.iter().any(|&c| c >= entry.c_in) || kept_out.iter().any(|&c| c >= entry.c_out) {
        return invalid(format!(
            "kept channels out of range for layer `{}` ({}→{})",
            entry.layer_id, entry.c_in, entry.c_out
        ));
    }
    let cols = kept_columns(entry, kept_in);
    let p = cols.len();
    let m = entry.rows();
    let primal_cost = (p * p * p) as f64 / 3.0;
    let dual_cost = (m * m * p) as f64 + (m * m * m) as f64 / 3.0;
    let (w, ridge_used, fallback) = if primal_cost <= dual_cost {
        let gram = entry.gram();
        let g = gram.select(&cols, &cols);
        let rhs = entry.cross().select(&cols, kept_out);
        solve_regularized(&g, &rhs, ridge * g.trace() / p as f64)?
    } else {
        let x = entry.design().select_cols(&cols);
        let y = entry.outputs.select_cols(kept_out);
        let sol = least_squares_dual(&x, &y, ridge * x.frobenius_sq() / p as f64)?;
        (sol.weights, sol.ridge_used, sol.fallback)
    };
    if m < p {
        debug!(
            "layer `{}`: {} cache rows for {} unknowns, relying on ridge {ridge_used:e}",
            entry.layer_id, m, p
        );
    }
    Ok(Reconstruction {
        params: weights_to_params(entry, &w, kept_in.len(), kept_out.len())?,
        ridge_used,
        fallback,
        underdetermined: m < p,
    })
}

/// Reconstruction residual `‖X·W − Y‖²` of `params` on the cached system
/// restricted to `kept_in` / `kept_out`.
pub fn cache_residual(entry: &CacheEntry, kept_in: &[usize], kept_out: &[usize], params: &Params) -> Result<f64> {
    let cols = kept_columns(entry, kept_in);
    let x = entry.design().select_cols(&cols);
    let y = entry.outputs.select_cols(kept_out);
    let per = params.weight.len() / kept_out.len();
    if per + 1 != cols.len() {
        return invalid("parameters do not match the kept channel set");
    }
    let mut total = 0.0;
    for r in 0..x.rows {
        let xr = x.row(r);
        for (o, _) in kept_out.iter().enumerate() {
            let wrow = &params.weight.data()[o * per..(o + 1) * per];
            let mut v: f64 = xr[..per].iter().zip(wrow).map(|(a, &b)| a * b as f64).sum();
            v += params.bias.data()[o] as f64;
            let d = v - y.get(r, o);
            total += d * d;
        }
    }
    Ok(total)
}

/// Original weights of a layer restricted to the kept channels.
pub fn truncated_params(graph: &ModelGraph, layer_idx: usize, kept_in: &[usize], kept_out: &[usize]) -> Result<Params> {
    let layer = &graph.layers()[layer_idx];
    let p = layer
        .params
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("layer `{}` has no weights", layer.spec.id)))?;
    let w = p.weight.gather_outer(kept_out)?;
    let w = match layer.spec.op {
        LayerOp::Conv { .. } => w.gather_axis1(kept_in)?,
        _ => {
            let block = layer.spec.c_in / graph_input_channels(graph, layer_idx);
            let cols: Vec<usize> = kept_in.iter().flat_map(|&c| c * block..(c + 1) * block).collect();
            w.gather_axis1(&cols)?
        }
    };
    Ok(Params {
        weight: w,
        bias: p.bias.gather_outer(kept_out)?,
    })
}

/// Channel count feeding parameterized layer `idx` (before any flatten).
pub(crate) fn graph_input_channels(graph: &ModelGraph, idx: usize) -> usize {
    let layers = graph.layers();
    for l in layers[..idx].iter().rev() {
        if l.spec.op == LayerOp::Flatten {
            return l.spec.c_in;
        }
        if l.params.is_some() {
            return l.spec.c_out;
        }
    }
    graph.input_shape()[0]
}

/// Per-layer bookkeeping of a pruning pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPruneInfo {
    pub layer_id: String,
    pub kept: usize,
    pub total: usize,
    pub reconstructed: bool,
    pub fallback: bool,
    pub underdetermined: bool,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub graph: ModelGraph,
    /// Kept filter indices per prunable layer, in plan order.
    pub kept: Vec<Vec<usize>>,
    pub layers: Vec<LayerPruneInfo>,
}

/// Kept filter sets for a plan, ranked on the original weights.
pub fn plan_kept_sets(graph: &ModelGraph, plan: &SparsityPlan) -> Result<Vec<Vec<usize>>> {
    let prunable = graph.prunable_indices();
    plan.check_covers(graph)?;
    prunable
        .iter()
        .zip(plan.ratios())
        .map(|(&idx, a)| {
            let w = &graph.layers()[idx].params.as_ref().expect("conv has params").weight;
            select_kept(w, a)
        })
        .collect()
}

/// Structural pruning only: drop filters and matching successor inputs, no refit.
pub fn truncate_network(graph: &ModelGraph, kept: &[Vec<usize>]) -> Result<ModelGraph> {
    let prunable = graph.prunable_indices();
    if kept.len() != prunable.len() {
        return invalid("one kept set per prunable layer required");
    }
    let mut g = graph.clone();
    for (&idx, k) in prunable.iter().zip(kept) {
        g = surgery_at(&g, idx, k)?;
    }
    Ok(g)
}

/// Apply a sparsity plan: rank filters, remove them, then refit every
/// successor whose input channels changed.
pub fn prune_network(
    graph: &ModelGraph,
    plan: &SparsityPlan,
    cache: &CalibrationCache,
    ridge: f64,
) -> Result<PruneOutcome> {
    let kept = plan_kept_sets(graph, plan)?;
    let mut pruned = truncate_network(graph, &kept)?;
    let prunable = graph.prunable_indices();

    let mut infos: Vec<LayerPruneInfo> = prunable
        .iter()
        .zip(&kept)
        .map(|(&idx, k)| LayerPruneInfo {
            layer_id: graph.layers()[idx].spec.id.clone(),
            kept: k.len(),
            total: graph.layers()[idx].spec.c_out,
            reconstructed: false,
            fallback: false,
            underdetermined: false,
        })
        .collect();

    for (pos, &idx) in prunable.iter().enumerate() {
        let kept_in = &kept[pos];
        if kept_in.len() == graph.layers()[idx].spec.c_out {
            continue;
        }
        let Some(succ) = graph.successor_of(idx) else { continue };
        let kept_out: Vec<usize> = match prunable.iter().position(|&p| p == succ) {
            Some(sp) => kept[sp].clone(),
            None => (0..graph.layers()[succ].spec.c_out).collect(),
        };
        let entry = cache.entry(succ).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "calibration cache has no entry for layer `{}`",
                graph.layers()[succ].spec.id
            ))
        })?;
        let rec = reconstruct_layer(entry, kept_in, &kept_out, ridge)?;
        pruned.layers_mut()[succ].params = Some(rec.params);
        if let Some(sp) = prunable.iter().position(|&p| p == succ) {
            infos[sp].reconstructed = true;
            infos[sp].fallback = rec.fallback;
            infos[sp].underdetermined = rec.underdetermined;
        }
    }
    let graph_out = ModelGraph::from_layers(pruned.input_shape(), pruned.layers().to_vec())?;
    Ok(PruneOutcome {
        graph: graph_out,
        kept,
        layers: infos,
    })
}
