use crate::error::{shape_err, Error, Result};

use super::conv::{conv2d_backward, conv2d_forward};
use super::Tensor;

/// The primitive operations a chain network is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOp {
    Conv { stride: usize, pad: usize },
    Linear,
    Relu,
    MaxPool { size: usize },
    AvgPool { size: usize },
    Flatten,
}

impl LayerOp {
    pub fn name(&self) -> &'static str {
        match self {
            LayerOp::Conv { .. } => "conv",
            LayerOp::Linear => "linear",
            LayerOp::Relu => "relu",
            LayerOp::MaxPool { .. } => "maxpool",
            LayerOp::AvgPool { .. } => "avgpool",
            LayerOp::Flatten => "flatten",
        }
    }

    /// Parse a kind name using the default hyper-parameters of that kind
    /// (3×3 conv keeps `stride 1, pad 1`, pools are 2×2).
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "conv" => LayerOp::Conv { stride: 1, pad: 1 },
            "linear" => LayerOp::Linear,
            "relu" => LayerOp::Relu,
            "maxpool" => LayerOp::MaxPool { size: 2 },
            "avgpool" => LayerOp::AvgPool { size: 2 },
            "flatten" => LayerOp::Flatten,
            other => return Err(Error::UnsupportedLayer(other.to_string())),
        })
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerOp::Conv { .. } | LayerOp::Linear)
    }
}

/// Weight and bias of a parameterized layer (or their gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

fn need_params<'a>(op: &LayerOp, params: Option<&'a Params>) -> Result<&'a Params> {
    params.ok_or_else(|| Error::InvalidArgument(format!("{} layer requires parameters", op.name())))
}

/// `y = x·Wᵀ + b` with `W: out×in`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fin) = input.dims2()?;
    let (fout, win) = weight.dims2()?;
    if win != fin {
        return shape_err(format!(
            "linear weight expects {win} features, input {:?} has {fin}",
            input.shape()
        ));
    }
    if bias.shape() != [fout] {
        return shape_err(format!("linear bias {:?} vs {fout} outputs", bias.shape()));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * fout);
    for s in 0..n {
        let xr = &x[s * fin..(s + 1) * fin];
        for o in 0..fout {
            let wr = &w[o * fin..(o + 1) * fin];
            let dot: f64 = xr.iter().zip(wr).map(|(&a, &b)| a as f64 * b as f64).sum();
            out.push((dot + bias.data()[o] as f64) as f32);
        }
    }
    Tensor::new(vec![n, fout], out)
}

fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Params)> {
    let (n, fin) = input.dims2()?;
    let (fout, _) = weight.dims2()?;
    if grad_out.shape() != [n, fout] {
        return shape_err(format!(
            "linear upstream gradient {:?}, expected {:?}",
            grad_out.shape(),
            [n, fout]
        ));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut dx = vec![0f32; n * fin];
    let mut acc = vec![0f64; fin];
    for s in 0..n {
        acc.fill(0.0);
        for o in 0..fout {
            let go = g[s * fout + o] as f64;
            if go == 0.0 {
                continue;
            }
            for (a, &wv) in acc.iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                *a += go * wv as f64;
            }
        }
        for (d, &a) in dx[s * fin..(s + 1) * fin].iter_mut().zip(&acc) {
            *d = a as f32;
        }
    }
    let mut dw = vec![0f64; fout * fin];
    let mut db = vec![0f64; fout];
    for s in 0..n {
        let xr = &x[s * fin..(s + 1) * fin];
        for o in 0..fout {
            let go = g[s * fout + o] as f64;
            db[o] += go;
            if go == 0.0 {
                continue;
            }
            for (d, &xv) in dw[o * fin..(o + 1) * fin].iter_mut().zip(xr) {
                *d += go * xv as f64;
            }
        }
    }
    Ok((
        Tensor::new(vec![n, fin], dx)?,
        Params {
            weight: Tensor::new(vec![fout, fin], dw.into_iter().map(|v| v as f32).collect())?,
            bias: Tensor::new(vec![fout], db.into_iter().map(|v| v as f32).collect())?,
        },
    ))
}

fn pool_dims(input: &Tensor, size: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if size == 0 || h % size != 0 || w % size != 0 {
        return shape_err(format!(
            "{size}x{size} pooling does not tile a {h}x{w} map"
        ));
    }
    Ok((n, c, h, w, h / size, w / size))
}

fn maxpool_forward(input: &Tensor, size: usize) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pool_dims(input, size)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks(h * w).take(n * c) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..size {
                    for kx in 0..size {
                        m = m.max(plane[(oy * size + ky) * w + ox * size + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Routes each upstream value to the first maximal cell of its window.
fn maxpool_backward(input: &Tensor, size: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pool_dims(input, size)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return shape_err(format!("maxpool upstream gradient {:?}", grad_out.shape()));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut dx = vec![0f32; x.len()];
    for p in 0..n * c {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (oy * size) * w + ox * size;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = (oy * size + ky) * w + ox * size + kx;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                }
                dx[p * h * w + best] += g[(p * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), dx)
}

fn avgpool_forward(input: &Tensor, size: usize) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pool_dims(input, size)?;
    let x = input.data();
    let scale = 1.0 / (size * size) as f64;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks(h * w).take(n * c) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0f64;
                for ky in 0..size {
                    for kx in 0..size {
                        s += plane[(oy * size + ky) * w + ox * size + kx] as f64;
                    }
                }
                out.push((s * scale) as f32);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

fn avgpool_backward(input: &Tensor, size: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pool_dims(input, size)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return shape_err(format!("avgpool upstream gradient {:?}", grad_out.shape()));
    }
    let g = grad_out.data();
    let scale = 1.0 / (size * size) as f32;
    let mut dx = vec![0f32; input.len()];
    for p in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                dx[p * h * w + y * w + x] = g[(p * oh + y / size) * ow + x / size] * scale;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), dx)
}

fn flatten(input: &Tensor) -> Result<Tensor> {
    if input.rank() < 2 {
        return shape_err(format!("flatten needs a batch axis, got {:?}", input.shape()));
    }
    let n = input.shape()[0];
    let rest = input.len() / n.max(1);
    input.clone().reshape(vec![n, rest])
}

/// Forward pass of a single layer.
pub fn layer_forward(op: &LayerOp, input: &Tensor, params: Option<&Params>) -> Result<Tensor> {
    match *op {
        LayerOp::Conv { stride, pad } => {
            let p = need_params(op, params)?;
            conv2d_forward(input, &p.weight, &p.bias, stride, pad)
        }
        LayerOp::Linear => {
            let p = need_params(op, params)?;
            linear_forward(input, &p.weight, &p.bias)
        }
        LayerOp::Relu => Ok(input.map(|v| v.max(0.0))),
        LayerOp::MaxPool { size } => maxpool_forward(input, size),
        LayerOp::AvgPool { size } => avgpool_forward(input, size),
        LayerOp::Flatten => flatten(input),
    }
}

/// Backward pass of a single layer given the input it saw in the forward pass.
///
/// Returns the gradient w.r.t. the input and, for parameterized layers, the
/// parameter gradients.
pub fn layer_backward(
    op: &LayerOp,
    params: Option<&Params>,
    cached_input: Option<&Tensor>,
    grad_out: &Tensor,
) -> Result<(Tensor, Option<Params>)> {
    let input = cached_input.ok_or_else(|| Error::MissingForwardCache(op.name().to_string()))?;
    match *op {
        LayerOp::Conv { stride, pad } => {
            let p = need_params(op, params)?;
            let (dx, dw, db) = conv2d_backward(input, &p.weight, &p.bias, stride, pad, grad_out)?;
            Ok((dx, Some(Params { weight: dw, bias: db })))
        }
        LayerOp::Linear => {
            let p = need_params(op, params)?;
            let (dx, grads) = linear_backward(input, &p.weight, grad_out)?;
            Ok((dx, Some(grads)))
        }
        LayerOp::Relu => {
            if grad_out.shape() != input.shape() {
                return shape_err(format!("relu upstream gradient {:?}", grad_out.shape()));
            }
            let data = input
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            Ok((Tensor::new(input.shape().to_vec(), data)?, None))
        }
        LayerOp::MaxPool { size } => Ok((maxpool_backward(input, size, grad_out)?, None)),
        LayerOp::AvgPool { size } => Ok((avgpool_backward(input, size, grad_out)?, None)),
        LayerOp::Flatten => Ok((grad_out.clone().reshape(input.shape().to_vec())?, None)),
    }
}
