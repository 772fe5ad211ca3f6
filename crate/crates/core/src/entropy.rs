//! Spatial entropy of convolutional feature maps.
//!
//! A channel is quantized into `B` bins using its own min/max range. For each
//! neighbor offset `(k, l)` the joint distribution of bin pairs at positions
//! `(i, j)` and `(i+k, j+l)` gives a bivariate entropy `H(k,l)`; relative to
//! the univariate entropy `H(0)` this yields
//! `H_R(k,l) = (H(k,l) − H(0)) / H(0)`, which is 0 for perfectly dependent
//! neighbors and 1 for independent ones.
//!
//! The aura matrix entropy (AME) of a map averages `H_R` over the four
//! second-order neighbors. The spatial disorder entropy (SDE) sums `H_R` over
//! every pair of positions and is only offered for small maps; AME is its
//! nearest-neighbor restriction.
//!
//! Layer entropy is the mean AME over all `(sample, channel)` maps, skipping
//! channels that are entirely zero or constant.

use crate::error::{invalid, Error, Result};
use crate::graph::ModelGraph;
use crate::numerics::Tensor;

/// The four second-order neighbors.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 4] = [(-1, 0), (0, -1), (1, 0), (0, 1)];

/// Largest map accepted by [`sde`]; its cost grows with `(H·W)²`.
pub const SDE_MAX_CELLS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntropyConfig {
    bins: usize,
}

impl EntropyConfig {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return invalid(format!("entropy needs at least 2 bins, got {bins}"));
        }
        if bins > u16::MAX as usize + 1 {
            return invalid(format!("at most 65536 bins supported, got {bins}"));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn offsets(&self) -> &'static [(isize, isize); 4] {
        &NEIGHBOR_OFFSETS
    }
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { bins: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridStatus {
    Valid,
    ExcludedAllZero,
    ExcludedConstant,
}

/// A quantized channel. `cells` is empty unless the grid is valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedGrid {
    pub height: usize,
    pub width: usize,
    pub bins: usize,
    pub cells: Vec<u16>,
    pub status: GridStatus,
}

impl QuantizedGrid {
    /// Build a grid from explicit bin ids; status is derived from the content.
    pub fn from_cells(height: usize, width: usize, bins: usize, cells: Vec<u16>) -> Result<Self> {
        if cells.len() != height * width {
            return invalid(format!(
                "{height}x{width} grid needs {} cells, got {}",
                height * width,
                cells.len()
            ));
        }
        if let Some(&c) = cells.iter().find(|&&c| c as usize >= bins) {
            return invalid(format!("bin id {c} out of range for {bins} bins"));
        }
        let distinct = cells.iter().any(|&c| c != cells[0]);
        let status = if distinct {
            GridStatus::Valid
        } else {
            GridStatus::ExcludedConstant
        };
        Ok(Self {
            height,
            width,
            bins,
            cells: if distinct { cells } else { Vec::new() },
            status,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.status == GridStatus::Valid
    }

    fn require_valid(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::ExcludedChannel(self.status))
        }
    }
}

/// Pair counts for one offset, `bins × bins`, indexed `[g·B + g′]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointHistogram {
    pub offset: (isize, isize),
    pub bins: usize,
    pub counts: Vec<u64>,
    pub pair_count: u64,
}

impl JointHistogram {
    pub fn probability(&self, g: usize, g2: usize) -> f64 {
        self.counts[g * self.bins + g2] as f64 / self.pair_count as f64
    }
}

/// Map every cell to `min(⌊(x−min)/(max−min)·B⌋, B−1)`.
pub fn quantize_channel(map: &[f32], height: usize, width: usize, bins: usize) -> Result<QuantizedGrid> {
    if height < 2 || width < 2 {
        return invalid(format!(
            "spatial entropy needs at least a 2x2 map, got {height}x{width}"
        ));
    }
    if bins < 2 {
        return invalid(format!("quantization needs at least 2 bins, got {bins}"));
    }
    if map.len() != height * width {
        return invalid(format!(
            "{height}x{width} map needs {} values, got {}",
            height * width,
            map.len()
        ));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut all_zero = true;
    for &v in map {
        let v = v as f64;
        lo = lo.min(v);
        hi = hi.max(v);
        all_zero &= v == 0.0;
    }
    let status = if all_zero {
        GridStatus::ExcludedAllZero
    } else if hi == lo {
        GridStatus::ExcludedConstant
    } else {
        GridStatus::Valid
    };
    let cells = if status == GridStatus::Valid {
        let range = hi - lo;
        let b = bins as f64;
        map.iter()
            .map(|&v| {
                let bin = ((v as f64 - lo) / range * b).floor() as usize;
                bin.min(bins - 1) as u16
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(QuantizedGrid {
        height,
        width,
        bins,
        cells,
        status,
    })
}

/// `−Σ c/n · log₂(c/n)` over nonzero counts.
fn entropy_of_counts(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    let n = total as f64;
    let mut h = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    h
}

/// Entropy (bits) of the marginal bin distribution.
pub fn univariate_entropy(grid: &QuantizedGrid) -> Result<f64> {
    grid.require_valid()?;
    let mut counts = vec![0u64; grid.bins];
    for &c in &grid.cells {
        counts[c as usize] += 1;
    }
    Ok(entropy_of_counts(counts.into_iter(), grid.cells.len() as u64))
}

fn check_offset(grid: &QuantizedGrid, (k, l): (isize, isize)) -> Result<()> {
    if k.unsigned_abs() >= grid.height || l.unsigned_abs() >= grid.width {
        return invalid(format!(
            "offset ({k},{l}) leaves no in-bounds pairs on a {}x{} grid",
            grid.height, grid.width
        ));
    }
    Ok(())
}

/// Row/column ranges of anchor positions whose partner at `(i+k, j+l)` is in bounds.
fn anchor_ranges(h: usize, w: usize, (k, l): (isize, isize)) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let rows = if k >= 0 { 0..h - k as usize } else { (-k) as usize..h };
    let cols = if l >= 0 { 0..w - l as usize } else { (-l) as usize..w };
    (rows, cols)
}

/// Joint histogram of bin pairs `(X[i][j], X[i+k][j+l])` over all in-bounds anchors.
pub fn joint_distribution(grid: &QuantizedGrid, offset: (isize, isize)) -> Result<JointHistogram> {
    grid.require_valid()?;
    check_offset(grid, offset)?;
    let (h, w, b) = (grid.height, grid.width, grid.bins);
    let mut counts = vec![0u64; b * b];
    let (rows, cols) = anchor_ranges(h, w, offset);
    let mut pairs = 0u64;
    for i in rows {
        let i2 = (i as isize + offset.0) as usize;
        for j in cols.clone() {
            let j2 = (j as isize + offset.1) as usize;
            let g = grid.cells[i * w + j] as usize;
            let g2 = grid.cells[i2 * w + j2] as usize;
            counts[g * b + g2] += 1;
            pairs += 1;
        }
    }
    Ok(JointHistogram {
        offset,
        bins: b,
        counts,
        pair_count: pairs,
    })
}

/// `H(k,l)` in bits.
pub fn bivariate_entropy(hist: &JointHistogram) -> f64 {
    entropy_of_counts(hist.counts.iter().copied(), hist.pair_count)
}

/// `clamp((H(k,l) − H(0)) / H(0), 0, 1)`.
///
/// The clamp absorbs boundary effects: the marginals of the in-bounds pairs
/// differ slightly from the full-grid marginal, which can push the raw ratio
/// just outside `[0, 1]`.
pub fn relative_entropy(h_kl: f64, h0: f64) -> Result<f64> {
    if !(h0 > 0.0) {
        return invalid(format!(
            "relative entropy undefined for univariate entropy {h0}"
        ));
    }
    Ok(((h_kl - h0) / h0).clamp(0.0, 1.0))
}

/// Per-channel outcome of [`ame`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelEntropy {
    Valid(f64),
    Excluded(GridStatus),
}

/// Reusable buffers for the sparse-touch histogram path.
#[derive(Debug, Default)]
pub struct EntropyScratch {
    counts: Vec<u32>,
    touched: Vec<u32>,
    marginal: Vec<u32>,
}

impl EntropyScratch {
    fn prepare(&mut self, bins: usize) {
        if self.counts.len() != bins * bins {
            self.counts = vec![0; bins * bins];
        }
        if self.marginal.len() != bins {
            self.marginal = vec![0; bins];
        }
    }

    fn univariate(&mut self, grid: &QuantizedGrid) -> f64 {
        self.marginal.fill(0);
        for &c in &grid.cells {
            self.marginal[c as usize] += 1;
        }
        entropy_of_counts(
            self.marginal.iter().map(|&c| c as u64),
            grid.cells.len() as u64,
        )
    }

    /// Bivariate entropy for one offset; only cells touched by this grid are
    /// visited and reset.
    fn bivariate(&mut self, grid: &QuantizedGrid, offset: (isize, isize)) -> f64 {
        let (h, w, b) = (grid.height, grid.width, grid.bins);
        let (rows, cols) = anchor_ranges(h, w, offset);
        self.touched.clear();
        let mut pairs = 0u64;
        for i in rows {
            let i2 = (i as isize + offset.0) as usize;
            let row = &grid.cells[i * w..(i + 1) * w];
            let row2 = &grid.cells[i2 * w..(i2 + 1) * w];
            for j in cols.clone() {
                let j2 = (j as isize + offset.1) as usize;
                let code = row[j] as usize * b + row2[j2] as usize;
                let slot = &mut self.counts[code];
                if *slot == 0 {
                    self.touched.push(code as u32);
                }
                *slot += 1;
                pairs += 1;
            }
        }
        let counts = &mut self.counts;
        let h = entropy_of_counts(self.touched.iter().map(|&c| counts[c as usize] as u64), pairs);
        for &c in &self.touched {
            counts[c as usize] = 0;
        }
        h
    }
}

/// Aura matrix entropy of one `H×W` map.
pub fn ame(map: &[f32], height: usize, width: usize, config: &EntropyConfig) -> Result<ChannelEntropy> {
    let mut scratch = EntropyScratch::default();
    ame_with(map, height, width, config, &mut scratch)
}

pub fn ame_with(
    map: &[f32],
    height: usize,
    width: usize,
    config: &EntropyConfig,
    scratch: &mut EntropyScratch,
) -> Result<ChannelEntropy> {
    let grid = quantize_channel(map, height, width, config.bins())?;
    if !grid.is_valid() {
        return Ok(ChannelEntropy::Excluded(grid.status));
    }
    Ok(ChannelEntropy::Valid(ame_of_grid_with(&grid, scratch)))
}

/// AME of an already-quantized valid grid.
pub fn ame_of_grid(grid: &QuantizedGrid) -> Result<f64> {
    grid.require_valid()?;
    let mut scratch = EntropyScratch::default();
    Ok(ame_of_grid_with(grid, &mut scratch))
}

fn ame_of_grid_with(grid: &QuantizedGrid, scratch: &mut EntropyScratch) -> f64 {
    scratch.prepare(grid.bins);
    let h0 = scratch.univariate(grid);
    let mut sum = 0.0;
    for &off in &NEIGHBOR_OFFSETS {
        let hkl = scratch.bivariate(grid, off);
        // h0 > 0 for a valid grid
        sum += ((hkl - h0) / h0).clamp(0.0, 1.0);
    }
    sum / 4.0
}

/// Spatial disorder entropy together with the relative entropy of every offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDisorder {
    pub value: f64,
    /// `(offset, H_R)` for every offset with `|k| < H`, `|l| < W`, `(0,0)` excluded.
    pub terms: Vec<((isize, isize), f64)>,
}

impl SpatialDisorder {
    pub fn term(&self, offset: (isize, isize)) -> Option<f64> {
        self.terms.iter().find(|(o, _)| *o == offset).map(|&(_, v)| v)
    }
}

/// `(1/(H·W)) Σ_{i,j} Σ_{k,l} H_R(i−k, j−l)` with `H_R(0,0) = 0`.
///
/// Each offset `(dy, dx)` occurs `(H−|dy|)·(W−|dx|)` times in the double sum.
pub fn sde(map: &[f32], height: usize, width: usize, config: &EntropyConfig) -> Result<SpatialDisorder> {
    if height * width > SDE_MAX_CELLS {
        return invalid(format!(
            "SDE limited to {SDE_MAX_CELLS} cells, map has {}",
            height * width
        ));
    }
    let grid = quantize_channel(map, height, width, config.bins())?;
    grid.require_valid()?;
    let mut scratch = EntropyScratch::default();
    scratch.prepare(grid.bins);
    let h0 = scratch.univariate(&grid);
    let (h, w) = (height as isize, width as isize);
    let mut terms = Vec::with_capacity((2 * height - 1) * (2 * width - 1) - 1);
    let mut total = 0.0;
    for dy in -(h - 1)..h {
        for dx in -(w - 1)..w {
            if dy == 0 && dx == 0 {
                continue;
            }
            let hr = ((scratch.bivariate(&grid, (dy, dx)) - h0) / h0).clamp(0.0, 1.0);
            let mult = ((h - dy.abs()) * (w - dx.abs())) as f64;
            total += mult * hr;
            terms.push(((dy, dx), hr));
        }
    }
    Ok(SpatialDisorder {
        value: total / (height * width) as f64,
        terms,
    })
}

/// Summary of one activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerEntropy {
    pub mean: f64,
    pub valid: usize,
    pub excluded_zero: usize,
    pub excluded_constant: usize,
}

/// Running sum over `(sample, channel)` maps, reduced in index order.
#[derive(Debug, Default, Clone, Copy)]
struct EntropyAccumulator {
    sum: f64,
    valid: usize,
    excluded_zero: usize,
    excluded_constant: usize,
}

impl EntropyAccumulator {
    fn add_tensor(&mut self, t: &Tensor, config: &EntropyConfig, scratch: &mut EntropyScratch) -> Result<()> {
        let (n, c, h, w) = t.dims4()?;
        for plane in t.data().chunks(h * w).take(n * c) {
            match ame_with(plane, h, w, config, scratch)? {
                ChannelEntropy::Valid(v) => {
                    self.sum += v;
                    self.valid += 1;
                }
                ChannelEntropy::Excluded(GridStatus::ExcludedAllZero) => self.excluded_zero += 1,
                ChannelEntropy::Excluded(_) => self.excluded_constant += 1,
            }
        }
        Ok(())
    }

    fn finish(&self) -> LayerEntropy {
        LayerEntropy {
            mean: if self.valid == 0 {
                0.0
            } else {
                self.sum / self.valid as f64
            },
            valid: self.valid,
            excluded_zero: self.excluded_zero,
            excluded_constant: self.excluded_constant,
        }
    }
}

/// Mean AME over every valid `(sample, channel)` map of an `N×C×H×W` tensor.
pub fn layer_entropy_stats(activations: &Tensor, config: &EntropyConfig) -> Result<LayerEntropy> {
    let mut acc = EntropyAccumulator::default();
    let mut scratch = EntropyScratch::default();
    acc.add_tensor(activations, config, &mut scratch)?;
    Ok(acc.finish())
}

/// Mean AME over valid maps; 0 when every channel is excluded.
pub fn layer_entropy(activations: &Tensor, config: &EntropyConfig) -> Result<f64> {
    Ok(layer_entropy_stats(activations, config)?.mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEntropyRow {
    pub layer_id: String,
    pub stats: LayerEntropy,
}

/// Per-layer and network-level spatial entropy of a model on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub layers: Vec<LayerEntropyRow>,
    pub network_mean: f64,
    pub bins: usize,
    pub samples: usize,
}

impl EntropyReport {
    /// CSV table: `layer,mean_ame,valid_channels,excluded_zero,excluded_constant`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,mean_ame,valid_channels,excluded_zero,excluded_constant\n");
        for row in &self.layers {
            s.push_str(&format!(
                "{},{:.8},{},{},{}\n",
                row.layer_id,
                row.stats.mean,
                row.stats.valid,
                row.stats.excluded_zero,
                row.stats.excluded_constant
            ));
        }
        s
    }
}

/// Samples forwarded at once while measuring entropy.
const ENTROPY_CHUNK: usize = 25;

/// Spatial entropy at every convolutional output (after its activation), or
/// only at the convolutions named in `subset`.
pub fn network_entropy(
    model: &ModelGraph,
    batch: &Tensor,
    config: &EntropyConfig,
    subset: Option<&[String]>,
) -> Result<EntropyReport> {
    let convs = model.conv_indices();
    let selected: Vec<usize> = match subset {
        None => convs.clone(),
        Some(names) => {
            let mut v = Vec::new();
            for name in names {
                let idx = model
                    .layer_index(name)
                    .filter(|i| convs.contains(i))
                    .ok_or_else(|| Error::InvalidArgument(format!("`{name}` is not a conv layer")))?;
                v.push(idx);
            }
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    if selected.is_empty() {
        return invalid("network entropy needs at least one convolutional layer");
    }
    let (n, ..) = batch.dims4()?;
    if n == 0 {
        return invalid("entropy calibration batch is empty");
    }
    let mut accs = vec![EntropyAccumulator::default(); selected.len()];
    let mut scratch = EntropyScratch::default();
    let mut start = 0;
    while start < n {
        let end = (start + ENTROPY_CHUNK).min(n);
        let chunk = batch.slice_outer(start, end)?;
        model.forward_with_taps(&chunk, |conv_idx, act| {
            if let Some(slot) = selected.iter().position(|&s| s == conv_idx) {
                accs[slot].add_tensor(act, config, &mut scratch)?;
            }
            Ok(())
        })?;
        start = end;
    }
    let layers: Vec<LayerEntropyRow> = selected
        .iter()
        .zip(&accs)
        .map(|(&idx, acc)| LayerEntropyRow {
            layer_id: model.layers()[idx].spec.id.clone(),
            stats: acc.finish(),
        })
        .collect();
    let network_mean = layers.iter().map(|r| r.stats.mean).sum::<f64>() / layers.len() as f64;
    Ok(EntropyReport {
        layers,
        network_mean,
        bins: config.bins(),
        samples: n,
    })
}

/// `1 − mean layer entropy`: large when activations are spatially ordered.
pub fn network_entropy_reward(
    model: &ModelGraph,
    batch: &Tensor,
    config: &EntropyConfig,
) -> Result<f64> {
    Ok(1.0 - network_entropy(model, batch, config, None)?.network_mean)
}
