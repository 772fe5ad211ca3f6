//! Chain CNN representation: layer specs with resolved geometry, weights,
//! FLOPS accounting, filter removal and checkpoints.

mod checkpoint;
mod flops;
mod presets;
mod surgery;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{layer_backward, layer_forward, LayerOp, Params, Tensor};

pub use checkpoint::{
    Archive, Entry, EntryData,
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use flops::{count_flops, preserved_ratio, FlopsReport};
pub use presets::{build_preset, preset_names, ArchitecturePreset, PresetRegistry};
pub use surgery::remove_output_channels;
pub(crate) use surgery::remove_output_channels_at as surgery_at;

/// One layer of a chain blueprint, before shapes are resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecl {
    pub id: String,
    pub op: LayerOp,
    /// Output channels for conv, output features for linear; ignored otherwise.
    pub width: usize,
    /// Square kernel size for conv; ignored otherwise.
    pub kernel: usize,
}

impl LayerDecl {
    pub fn conv(id: &str, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            id: id.to_string(),
            op: LayerOp::Conv { stride, pad },
            width,
            kernel,
        }
    }

    pub fn linear(id: &str, width: usize) -> Self {
        Self {
            id: id.to_string(),
            op: LayerOp::Linear,
            width,
            kernel: 0,
        }
    }

    pub fn simple(id: &str, op: LayerOp) -> Self {
        Self {
            id: id.to_string(),
            op,
            width: 0,
            kernel: 0,
        }
    }
}

/// Resolved geometry of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: String,
    pub op: LayerOp,
    pub c_in: usize,
    pub c_out: usize,
    /// `(Kh, Kw)`; `(0, 0)` for layers without a kernel.
    pub kernel: (usize, usize),
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

impl LayerSpec {
    pub fn stride(&self) -> usize {
        match self.op {
            LayerOp::Conv { stride, .. } => stride,
            LayerOp::MaxPool { size } | LayerOp::AvgPool { size } => size,
            _ => 1,
        }
    }

    pub fn pad(&self) -> usize {
        match self.op {
            LayerOp::Conv { pad, .. } => pad,
            _ => 0,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.op, LayerOp::Conv { .. })
    }

    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.op {
            LayerOp::Conv { .. } => Some((
                vec![self.c_out, self.c_in, self.kernel.0, self.kernel.1],
                vec![self.c_out],
            )),
            LayerOp::Linear => Some((vec![self.c_out, self.c_in], vec![self.c_out])),
            _ => None,
        }
    }

    fn decl(&self) -> LayerDecl {
        LayerDecl {
            id: self.id.clone(),
            op: self.op,
            width: self.c_out,
            kernel: self.kernel.0,
        }
    }
}

/// Propagate `(C, H, W)` through a blueprint.
pub fn resolve_specs(input_shape: [usize; 3], decls: &[LayerDecl]) -> Result<Vec<LayerSpec>> {
    let [mut c, mut h, mut w] = input_shape;
    let mut flat = false;
    let mut specs = Vec::with_capacity(decls.len());
    for d in decls {
        let in_hw = (h, w);
        let spec = match d.op {
            LayerOp::Conv { stride, pad } => {
                if flat {
                    return shape_err(format!("conv `{}` after flatten", d.id));
                }
                let geom = crate::numerics::ConvGeometry::new(d.kernel, d.kernel, stride, pad);
                let (oh, ow) = geom
                    .out_hw(h, w)
                    .map_err(|e| Error::Shape(format!("layer `{}`: {e}", d.id)))?;
                let s = LayerSpec {
                    id: d.id.clone(),
                    op: d.op,
                    c_in: c,
                    c_out: d.width,
                    kernel: (d.kernel, d.kernel),
                    in_hw,
                    out_hw: (oh, ow),
                };
                c = d.width;
                h = oh;
                w = ow;
                s
            }
            LayerOp::Linear => {
                if !flat {
                    return shape_err(format!("linear `{}` needs a flatten before it", d.id));
                }
                let s = LayerSpec {
                    id: d.id.clone(),
                    op: d.op,
                    c_in: c,
                    c_out: d.width,
                    kernel: (0, 0),
                    in_hw: (1, 1),
                    out_hw: (1, 1),
                };
                c = d.width;
                s
            }
            LayerOp::Relu => LayerSpec {
                id: d.id.clone(),
                op: d.op,
                c_in: c,
                c_out: c,
                kernel: (0, 0),
                in_hw,
                out_hw: in_hw,
            },
            LayerOp::MaxPool { size } | LayerOp::AvgPool { size } => {
                if flat || size == 0 || h % size != 0 || w % size != 0 {
                    return shape_err(format!(
                        "pool `{}` of size {size} does not tile {h}x{w}",
                        d.id
                    ));
                }
                h /= size;
                w /= size;
                LayerSpec {
                    id: d.id.clone(),
                    op: d.op,
                    c_in: c,
                    c_out: c,
                    kernel: (size, size),
                    in_hw,
                    out_hw: (h, w),
                }
            }
            LayerOp::Flatten => {
                if flat {
                    return shape_err(format!("second flatten `{}`", d.id));
                }
                let s = LayerSpec {
                    id: d.id.clone(),
                    op: d.op,
                    c_in: c,
                    c_out: c * h * w,
                    kernel: (0, 0),
                    in_hw,
                    out_hw: (1, 1),
                };
                c *= h * w;
                h = 1;
                w = 1;
                flat = true;
                s
            }
        };
        specs.push(spec);
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Option<Params>,
}

/// Ordered chain of layers with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

/// Per-layer inputs recorded by [`ModelGraph::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Vec<Tensor>,
}

impl ModelGraph {
    /// Resolve a blueprint and draw fan-in scaled uniform weights:
    /// `U(±√(6/fan_in))` for weights and `U(±1/√fan_in)` for biases.
    pub fn from_blueprint<R: Rng + ?Sized>(
        input_shape: [usize; 3],
        decls: &[LayerDecl],
        rng: &mut R,
    ) -> Result<Self> {
        let specs = resolve_specs(input_shape, decls)?;
        let layers = specs
            .into_iter()
            .map(|spec| {
                let params = spec.param_shapes().map(|(ws, bs)| {
                    let fan_in: usize = ws[1..].iter().product();
                    let wb = (6.0 / fan_in as f32).sqrt();
                    let bb = 1.0 / (fan_in as f32).sqrt();
                    Params {
                        weight: Tensor::uniform(&ws, -wb, wb, rng),
                        bias: Tensor::uniform(&bs, -bb, bb, rng),
                    }
                });
                Layer { spec, params }
            })
            .collect();
        Ok(Self {
            input_shape,
            layers,
        })
    }

    /// Assemble a graph from explicit layers, checking chain consistency and
    /// parameter shapes.
    pub fn from_layers(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let decls: Vec<LayerDecl> = layers.iter().map(|l| l.spec.decl()).collect();
        let specs = resolve_specs(input_shape, &decls)?;
        for (spec, layer) in specs.iter().zip(&layers) {
            if *spec != layer.spec {
                return shape_err(format!(
                    "layer `{}` spec {:?} inconsistent with chain (expected {:?})",
                    spec.id, layer.spec, spec
                ));
            }
            match (spec.param_shapes(), &layer.params) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) => {
                    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                        return shape_err(format!(
                            "layer `{}` parameters {:?}/{:?}, expected {:?}/{:?}",
                            spec.id,
                            p.weight.shape(),
                            p.bias.shape(),
                            ws,
                            bs
                        ));
                    }
                }
                (Some(_), None) => {
                    return shape_err(format!("layer `{}` is missing parameters", spec.id))
                }
                (None, Some(_)) => {
                    return shape_err(format!("layer `{}` cannot carry parameters", spec.id))
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for l in &layers {
            if !seen.insert(l.spec.id.as_str()) {
                return shape_err(format!("duplicate layer id `{}`", l.spec.id));
            }
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn blueprint(&self) -> Vec<LayerDecl> {
        self.layers.iter().map(|l| l.spec.decl()).collect()
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.spec.id == id)
    }

    pub fn conv_indices(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].spec.is_conv())
            .collect()
    }

    pub fn param_indices(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].params.is_some())
            .collect()
    }

    /// Layers whose filters may be removed: every convolution.
    pub fn prunable_indices(&self) -> Vec<usize> {
        self.conv_indices()
    }

    /// Next parameterized layer after `idx`.
    pub fn successor_of(&self, idx: usize) -> Option<usize> {
        (idx + 1..self.layers.len()).find(|&j| self.layers[j].params.is_some())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(|l| l.spec.c_out).unwrap_or(0)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (_, c, h, w) = input.dims4()?;
        if [c, h, w] != self.input_shape {
            return shape_err(format!(
                "model expects inputs {:?}, got {:?}",
                self.input_shape,
                input.shape()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in &self.layers {
            x = layer_forward(&l.spec.op, &x, l.params.as_ref())?;
        }
        Ok(x)
    }

    /// Forward pass that reports each convolution's activated output to `tap`.
    ///
    /// The tapped tensor is the output of the rectifier directly following the
    /// convolution, or the raw convolution output when none follows.
    pub fn forward_with_taps(
        &self,
        input: &Tensor,
        mut tap: impl FnMut(usize, &Tensor) -> Result<()>,
    ) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut pending: Option<usize> = None;
        for (i, l) in self.layers.iter().enumerate() {
            x = layer_forward(&l.spec.op, &x, l.params.as_ref())?;
            if l.spec.is_conv() {
                let followed_by_relu = self
                    .layers
                    .get(i + 1)
                    .is_some_and(|n| n.spec.op == LayerOp::Relu);
                if followed_by_relu {
                    pending = Some(i);
                } else {
                    tap(i, &x)?;
                }
            } else if let Some(conv) = pending.take() {
                tap(conv, &x)?;
            }
        }
        Ok(x)
    }

    /// Forward pass recording every layer input, for [`ModelGraph::backward`].
    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in &self.layers {
            let y = layer_forward(&l.spec.op, &x, l.params.as_ref())?;
            inputs.push(x);
            x = y;
        }
        Ok((x, ForwardCache { inputs }))
    }

    /// Parameter gradients for every layer (`None` for parameter-free layers).
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<Vec<Option<Params>>> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::MissingForwardCache(format!(
                "graph cache holds {} of {} layer inputs",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (dx, pg) = layer_backward(&l.spec.op, l.params.as_ref(), cache.inputs.get(i), &g)?;
            grads[i] = pg;
            // the input gradient of the first layer is never needed
            if i > 0 {
                g = dx;
            }
        }
        Ok(grads)
    }

    /// Output of layer `idx` (before any later layer) for the given input.
    pub fn forward_until(&self, input: &Tensor, idx: usize) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in &self.layers[..=idx] {
            x = layer_forward(&l.spec.op, &x, l.params.as_ref())?;
        }
        Ok(x)
    }

    /// Layer specs after replacing every convolution's width; convolutions are
    /// listed in chain order.
    pub fn specs_with_conv_widths(&self, widths: &[usize]) -> Result<Vec<LayerSpec>> {
        let mut decls = self.blueprint();
        let mut it = widths.iter();
        for d in decls.iter_mut() {
            if matches!(d.op, LayerOp::Conv { .. }) {
                d.width = *it
                    .next()
                    .ok_or_else(|| Error::InvalidArgument("too few conv widths".into()))?;
            }
        }
        if it.next().is_some() {
            return Err(Error::InvalidArgument("too many conv widths".into()));
        }
        resolve_specs(self.input_shape, &decls)
    }

    pub fn flops(&self) -> FlopsReport {
        FlopsReport::of_specs(self.layers.iter().map(|l| &l.spec))
    }

    pub fn total_flops(&self) -> u64 {
        self.flops().total
    }
}
