use crate::error::{invalid, Error, Result};
use crate::graph::{count_flops, LayerSpec, ModelGraph};
use crate::pruner::kept_count;

pub const STATE_DIM: usize = 11;

/// FLOPS bookkeeping of the original graph, evaluated for arbitrary
/// convolution widths.
#[derive(Debug, Clone)]
pub struct BudgetModel {
    graph: ModelGraph,
    layer_ids: Vec<String>,
    widths: Vec<usize>,
    conv_layers: Vec<usize>,
    total: u64,
    /// Per-feature (min, max) of the static features over prunable layers.
    ranges: [(f64, f64); 6],
    /// Sparsity cap assumed by the "still reducible" state feature.
    a_max: f64,
}

/// Result of clipping a proposed action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedAction {
    pub action: f64,
    pub a_min: f64,
    pub clipped: bool,
    pub kept: usize,
}

impl BudgetModel {
    pub fn new(graph: &ModelGraph) -> Result<Self> {
        let conv_layers = graph.prunable_indices();
        if conv_layers.is_empty() {
            return invalid("graph has no prunable layers");
        }
        let original: Vec<LayerSpec> = graph.layers().iter().map(|l| l.spec.clone()).collect();
        let widths: Vec<usize> = conv_layers.iter().map(|&i| original[i].c_out).collect();
        let total = graph.total_flops();
        let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 6];
        for &i in &conv_layers {
            for (r, v) in ranges.iter_mut().zip(static_features(&original[i])) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        Ok(Self {
            graph: graph.clone(),
            layer_ids: conv_layers.iter().map(|&i| original[i].id.clone()).collect(),
            widths,
            conv_layers,
            total,
            ranges,
            a_max: 0.8,
        })
    }

    pub fn with_a_max(mut self, a_max: f64) -> Self {
        self.a_max = a_max;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len()
    }

    pub fn layer_ids(&self) -> &[String] {
        &self.layer_ids
    }

    pub fn original_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn original_flops(&self) -> u64 {
        self.total
    }

    /// Total FLOPS after layers `< prefix.len()` take the given widths, layer
    /// `prefix.len()` (if any) takes `current`, and later layers keep
    /// `later(n)` filters out of their original `n`.
    fn flops_with(&self, prefix: &[usize], current: Option<usize>, later: impl Fn(usize) -> usize) -> Result<u64> {
        let t = prefix.len();
        let widths: Vec<usize> = (0..self.num_layers())
            .map(|i| {
                if i < t {
                    prefix[i]
                } else if i == t {
                    current.unwrap_or(self.widths[i])
                } else {
                    later(self.widths[i])
                }
            })
            .collect();
        Ok(self.graph.specs_with_conv_widths(&widths)?.iter().map(count_flops).sum())
    }

    /// Total FLOPS for a full set of kept widths.
    pub fn flops_for_widths(&self, widths: &[usize]) -> Result<u64> {
        if widths.len() != self.num_layers() {
            return invalid("one width per prunable layer required");
        }
        Ok(self.graph.specs_with_conv_widths(widths)?.iter().map(count_flops).sum())
    }

    /// The 11 normalized features for step `t`, given the widths already
    /// chosen for layers `< t` and the previous action.
    ///
    /// Static features are min-max scaled over the prunable layers (a
    /// constant feature maps to 0); FLOPS quantities are fractions of the
    /// original total, which itself is reported as 1.
    pub fn layer_state(&self, t: usize, prefix: &[usize], prev_action: f64) -> Result<Vec<f64>> {
        let n = self.num_layers();
        if t >= n || prefix.len() != t {
            return invalid(format!("step {t} is not a prunable layer position (prefix {})", prefix.len()));
        }
        let total = self.total as f64;
        let specs = {
            let mut w = prefix.to_vec();
            w.extend_from_slice(&self.widths[t..]);
            self.graph.specs_with_conv_widths(&w)?
        };
        let spec = &specs[self.conv_layers[t]];
        let now = self.flops_with(prefix, None, |w| w)? as f64;
        let reduced = total - now;
        let reducible_later = now - self.flops_with(prefix, None, |w| kept_count(w, self.a_max))? as f64;
        let feats = static_features(spec);
        let mut s = Vec::with_capacity(STATE_DIM);
        s.push(if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 });
        for (v, &(lo, hi)) in feats.iter().zip(&self.ranges) {
            s.push(if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 });
        }
        s.push((reduced / total).clamp(0.0, 1.0));
        s.push((reducible_later / total).clamp(0.0, 1.0));
        s.push(1.0);
        s.push(prev_action.clamp(0.0, 1.0));
        debug_assert_eq!(s.len(), STATE_DIM);
        Ok(s)
    }

    /// Raise `a` to the smallest sparsity that keeps the budget
    /// `β·F_original` reachable with every later layer at `a_max`, and cap it
    /// at `a_max`.
    pub fn clip_action(&self, a: f64, t: usize, prefix: &[usize], beta: f64, a_max: f64) -> Result<ClippedAction> {
        if !(0.0..1.0).contains(&a_max) {
            return invalid(format!("a_max must lie in [0,1), got {a_max}"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return invalid(format!("FLOPS target must lie in (0,1), got {beta}"));
        }
        if t >= self.num_layers() || prefix.len() != t {
            return invalid(format!("step {t} is not a prunable layer position"));
        }
        let n = self.widths[t];
        let budget = beta * self.total as f64;
        let later = |w: usize| kept_count(w, a_max);
        let k_floor = kept_count(n, a_max);
        let feasible = |k: usize| -> Result<bool> { Ok(self.flops_with(prefix, Some(k), later)? as f64 <= budget) };
        if !feasible(k_floor)? {
            return Err(Error::InfeasibleBudget {
                layer: t,
                best: self.flops_with(prefix, Some(k_floor), later)? as f64 / self.total as f64,
                target: beta,
            });
        }
        // largest feasible kept count; feasibility is monotone in k
        let (mut lo, mut hi) = (k_floor, n);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if feasible(mid)? {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let k_max = lo;
        let a_min = min_sparsity_for(n, k_max);
        let target = a.clamp(0.0, 1.0);
        let action = target.clamp(a_min, a_max);
        Ok(ClippedAction {
            action,
            a_min,
            clipped: action != target,
            kept: kept_count(n, action),
        })
    }
}

/// Smallest `a` with `kept_count(n, a) ≤ k`.
fn min_sparsity_for(n: usize, k: usize) -> f64 {
    if k >= n {
        return 0.0;
    }
    let mut a = (1.0 - k as f64 / n as f64).max(0.0);
    while kept_count(n, a) > k {
        a = a.next_up();
    }
    // step back while the count still satisfies the bound
    while a > 0.0 && kept_count(n, a.next_down()) <= k {
        a = a.next_down();
    }
    a
}

fn static_features(spec: &LayerSpec) -> [f64; 6] {
    [
        spec.c_in as f64,
        spec.c_out as f64,
        spec.kernel.0 as f64,
        spec.stride() as f64,
        (spec.out_hw.0 * spec.out_hw.1) as f64,
        count_flops(spec) as f64,
    ]
}
