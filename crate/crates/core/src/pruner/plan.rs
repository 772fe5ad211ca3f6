use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::graph::ModelGraph;

use super::kept_count;

/// Sparsity ratio per prunable layer, in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPlan {
    entries: Vec<(String, f64)>,
}

impl SparsityPlan {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        for (id, a) in &entries {
            if !(0.0..1.0).contains(a) {
                return invalid(format!("sparsity for `{id}` must lie in [0, 1), got {a}"));
            }
        }
        Ok(Self { entries })
    }

    /// The same ratio for every prunable layer of `graph`.
    pub fn uniform(graph: &ModelGraph, sparsity: f64) -> Result<Self> {
        Self::new(
            graph
                .prunable_indices()
                .into_iter()
                .map(|i| (graph.layers()[i].spec.id.clone(), sparsity))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, a)| *a)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fail unless the plan names exactly the prunable layers of `graph`, in order.
    pub fn check_covers(&self, graph: &ModelGraph) -> Result<()> {
        let ids: Vec<&str> = graph
            .prunable_indices()
            .into_iter()
            .map(|i| graph.layers()[i].spec.id.as_str())
            .collect();
        let mine: Vec<&str> = self.entries.iter().map(|(id, _)| id.as_str()).collect();
        if ids != mine {
            return invalid(format!(
                "plan covers layers {mine:?} but the graph's prunable layers are {ids:?}"
            ));
        }
        Ok(())
    }

    /// Semicolon-joined ratios with 4 decimals, as used in episode logs.
    pub fn compact(&self) -> String {
        self.entries
            .iter()
            .map(|(_, a)| format!("{a:.4}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// `layer_id<TAB>sparsity` lines with 6 decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, a) in &self.entries {
            writeln!(s, "{id}\t{a:.6}").unwrap();
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim_end_matches(['\n', '\r']);
            if !trimmed.trim().is_empty() {
                let bad = |reason: String| Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    reason,
                };
                let (id, val) = trimmed
                    .split_once('\t')
                    .ok_or_else(|| bad(format!("expected `layer_id<TAB>sparsity`, got {trimmed:?}")))?;
                let a: f64 = val
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("bad sparsity value {val:?}")))?;
                entries.push((id.to_string(), a));
            }
            offset += line.len() as u64;
        }
        Self::new(entries)
    }
}

pub fn write_plan(plan: &SparsityPlan, path: &Path) -> Result<()> {
    fs::write(path, plan.to_text())?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<SparsityPlan> {
    SparsityPlan::parse(&fs::read_to_string(path)?, path)
}

/// Snap `a` to a multiple of `1e-6` that keeps the same number of filters out
/// of `n`, so the plan file reproduces the pruning decision exactly.
pub fn canonical_ratio(a: f64, n: usize) -> f64 {
    let target = kept_count(n, a);
    let micros = (a * 1e6).round() as i64;
    for delta in [0i64, 1, -1, 2, -2] {
        let m = (micros + delta).clamp(0, 999_999);
        let r = m as f64 / 1e6;
        if kept_count(n, r) == target {
            return r;
        }
    }
    a
}
