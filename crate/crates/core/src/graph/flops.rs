use crate::error::{invalid, Result};
use crate::numerics::LayerOp;

use super::{LayerSpec, ModelGraph};

/// FLOPS of one layer, counting a multiply-accumulate as two operations.
///
/// conv: `2·Kh·Kw·c_in·c_out·H'·W'`; linear: `2·in·out`; everything else 0.
pub fn count_flops(spec: &LayerSpec) -> u64 {
    match spec.op {
        LayerOp::Conv { .. } => {
            2 * (spec.kernel.0 * spec.kernel.1 * spec.c_in * spec.c_out * spec.out_hw.0 * spec.out_hw.1)
                as u64
        }
        LayerOp::Linear => 2 * (spec.c_in * spec.c_out) as u64,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub per_layer: Vec<(String, u64)>,
    pub total: u64,
}

impl FlopsReport {
    pub fn of_specs<'a>(specs: impl IntoIterator<Item = &'a LayerSpec>) -> Self {
        let per_layer: Vec<(String, u64)> = specs
            .into_iter()
            .map(|s| (s.id.clone(), count_flops(s)))
            .collect();
        let total = per_layer.iter().map(|(_, f)| f).sum();
        Self { per_layer, total }
    }

    /// `self.total / reference.total`.
    pub fn ratio_to(&self, reference: &FlopsReport) -> Result<f64> {
        if reference.total == 0 {
            return invalid("reference graph has zero FLOPS");
        }
        Ok(self.total as f64 / reference.total as f64)
    }
}

/// Fraction of the original FLOPS kept by the pruned graph.
pub fn preserved_ratio(pruned: &ModelGraph, original: &ModelGraph) -> Result<f64> {
    pruned.flops().ratio_to(&original.flops())
}
