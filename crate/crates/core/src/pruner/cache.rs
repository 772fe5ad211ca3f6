use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::graph::ModelGraph;
use crate::numerics::{im2col, ConvGeometry, LayerOp, Matrix, PatchMatrix, PatchProvenance, Tensor};

/// Cached inputs and original outputs of one parameterized layer.
#[derive(Debug)]
pub struct CacheEntry {
    pub layer_idx: usize,
    pub layer_id: String,
    pub op: LayerOp,
    pub kernel: (usize, usize),
    /// Input channels of the layer (before flatten for linear layers).
    pub c_in: usize,
    pub c_out: usize,
    /// Design-matrix columns per input channel: `Kh·Kw` for conv, `H·W` for a
    /// linear layer behind a flatten.
    pub block: usize,
    pub patches: PatchMatrix,
    /// Original layer outputs, row-aligned with `patches`.
    pub outputs: Matrix,
    design: OnceLock<Matrix>,
    gram: OnceLock<Matrix>,
    cross: OnceLock<Matrix>,
}

impl CacheEntry {
    pub fn rows(&self) -> usize {
        self.patches.rows
    }

    /// Patches in `f64` with a trailing all-ones column.
    pub fn design(&self) -> &Matrix {
        self.design.get_or_init(|| {
            let p = self.patches.cols;
            let mut m = Matrix::zeros(self.patches.rows, p + 1);
            for r in 0..self.patches.rows {
                let src = self.patches.row(r);
                let dst = &mut m.data[r * (p + 1)..(r + 1) * (p + 1)];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s as f64;
                }
                dst[p] = 1.0;
            }
            m
        })
    }

    /// `XᵀX` of the augmented design, computed once.
    pub fn gram(&self) -> &Matrix {
        self.gram.get_or_init(|| {
            let x = self.design();
            let n = x.cols;
            let mut g = Matrix::zeros(n, n);
            for r in 0..x.rows {
                let row = x.row(r);
                for i in 0..n {
                    let a = row[i];
                    if a == 0.0 {
                        continue;
                    }
                    let gi = &mut g.data[i * n..i * n + i + 1];
                    for (o, &b) in gi.iter_mut().zip(&row[..=i]) {
                        *o += a * b;
                    }
                }
            }
            for i in 0..n {
                for j in 0..i {
                    g.data[j * n + i] = g.data[i * n + j];
                }
            }
            g
        })
    }

    /// `XᵀY` of the augmented design, computed once.
    pub fn cross(&self) -> &Matrix {
        self.cross
            .get_or_init(|| self.design().t_matmul(&self.outputs).expect("aligned rows"))
    }
}

/// Per-layer activations captured from the unpruned network in one pass.
#[derive(Debug)]
pub struct CalibrationCache {
    pub entries: Vec<CacheEntry>,
    pub sample_count: usize,
    pub positions_per_sample: usize,
}

impl CalibrationCache {
    pub fn entry(&self, layer_idx: usize) -> Option<&CacheEntry> {
        self.entries.iter().find(|e| e.layer_idx == layer_idx)
    }
}

const CACHE_CHUNK: usize = 25;

/// Record, for every parameterized layer, im2col rows at random output
/// positions together with the layer's original outputs there.
///
/// Convolutions contribute `positions_per_sample` distinct positions per
/// sample (all of them when the map is smaller); a linear layer contributes
/// one row per sample. Positions depend only on `seed`.
pub fn build_calibration_cache(
    graph: &ModelGraph,
    samples: &Tensor,
    positions_per_sample: usize,
    seed: u64,
) -> Result<CalibrationCache> {
    let (n, ..) = samples.dims4()?;
    if n == 0 {
        return invalid("calibration batch is empty");
    }
    if positions_per_sample == 0 {
        return invalid("positions_per_sample must be at least 1");
    }
    let param_layers = graph.param_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // positions[layer slot][sample] drawn up front so chunking cannot change them
    let mut positions: Vec<Vec<Vec<usize>>> = Vec::with_capacity(param_layers.len());
    for &idx in &param_layers {
        let spec = &graph.layers()[idx].spec;
        let per_sample = spec.out_hw.0 * spec.out_hw.1;
        let k = positions_per_sample.min(per_sample);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            if spec.is_conv() {
                v.push(sample(&mut rng, per_sample, k).into_vec());
            } else {
                v.push(vec![0]);
            }
        }
        positions.push(v);
    }

    struct Partial {
        data: Vec<f32>,
        outputs: Vec<f64>,
        prov: Vec<(usize, usize)>,
    }
    let mut partial: Vec<Partial> = param_layers
        .iter()
        .map(|_| Partial { data: Vec::new(), outputs: Vec::new(), prov: Vec::new() })
        .collect();

    let mut start = 0;
    while start < n {
        let end = (start + CACHE_CHUNK).min(n);
        let chunk = samples.slice_outer(start, end)?;
        let (_, fwd) = graph.forward_cached(&chunk)?;
        for (slot, &idx) in param_layers.iter().enumerate() {
            let layer = &graph.layers()[idx];
            let input = &fwd.inputs[idx];
            let output = match fwd.inputs.get(idx + 1) {
                Some(t) => t.clone(),
                None => graph.forward_until(&chunk, idx)?,
            };
            let part = &mut partial[slot];
            match layer.spec.op {
                LayerOp::Conv { stride, pad } => {
                    let geom = ConvGeometry::new(layer.spec.kernel.0, layer.spec.kernel.1, stride, pad);
                    let per_sample = layer.spec.out_hw.0 * layer.spec.out_hw.1;
                    let mut flat = Vec::new();
                    for local in 0..end - start {
                        for &p in &positions[slot][start + local] {
                            flat.push(local * per_sample + p);
                        }
                    }
                    let pm = im2col(input, geom, Some(&flat))?;
                    part.data.extend_from_slice(&pm.data);
                    let cout = layer.spec.c_out;
                    let out = output.data();
                    for &(local, p) in &pm.provenance.rows {
                        for co in 0..cout {
                            part.outputs.push(out[(local * cout + co) * per_sample + p] as f64);
                        }
                        part.prov.push((start + local, p));
                    }
                }
                LayerOp::Linear => {
                    let (rows, _) = input.dims2()?;
                    part.data.extend_from_slice(input.data());
                    part.outputs.extend(output.data().iter().map(|&v| v as f64));
                    part.prov.extend((0..rows).map(|local| (start + local, 0)));
                }
                _ => unreachable!("only conv and linear carry parameters"),
            }
        }
        start = end;
    }

    let mut entries = Vec::with_capacity(param_layers.len());
    for (&idx, part) in param_layers.iter().zip(partial) {
        let layer = &graph.layers()[idx];
        let (c_in, block) = match layer.spec.op {
            LayerOp::Conv { .. } => (layer.spec.c_in, layer.spec.kernel.0 * layer.spec.kernel.1),
            _ => {
                let c = crate::pruner::graph_input_channels(graph, idx);
                (c, layer.spec.c_in / c)
            }
        };
        let cols = layer.spec.c_in * if layer.spec.is_conv() { block } else { 1 };
        let rows = part.prov.len();
        entries.push(CacheEntry {
            layer_idx: idx,
            layer_id: layer.spec.id.clone(),
            op: layer.spec.op,
            kernel: layer.spec.kernel,
            c_in,
            c_out: layer.spec.c_out,
            block,
            patches: PatchMatrix {
                rows,
                cols,
                data: part.data,
                provenance: PatchProvenance {
                    layer: Some(layer.spec.id.clone()),
                    rows: part.prov,
                },
            },
            outputs: Matrix::from_vec(rows, layer.spec.c_out, part.outputs)?,
            design: OnceLock::new(),
            gram: OnceLock::new(),
            cross: OnceLock::new(),
        });
    }
    Ok(CalibrationCache {
        entries,
        sample_count: n,
        positions_per_sample,
    })
}
