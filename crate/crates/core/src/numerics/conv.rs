use crate::error::{shape_err, Result};

use super::im2col::{col2im_add, columns_f64, ConvGeometry};
use super::Tensor;

fn check_conv(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (_, c, _, _) = input.dims4()?;
    let (cout, cin, _, _) = weight.dims4()?;
    if cin != c {
        return shape_err(format!(
            "conv weight expects {cin} input channels, input {:?} has {c}",
            input.shape()
        ));
    }
    if bias.shape() != [cout] {
        return shape_err(format!(
            "conv bias shape {:?} does not match {cout} filters",
            bias.shape()
        ));
    }
    Ok((cout, cin))
}

/// Zero-padded 2-D cross-correlation with per-filter bias.
///
/// Values are stored in `f32`; every output cell is accumulated in `f64` in a
/// fixed `(cin, ky, kx)` order.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (cout, _) = check_conv(input, weight, bias)?;
    let (n, c, h, w) = input.dims4()?;
    let (_, _, kh, kw) = weight.dims4()?;
    let geom = ConvGeometry::new(kh, kw, stride, pad);
    let (oh, ow) = geom.out_hw(h, w)?;
    let p_len = oh * ow;
    let k_len = c * kh * kw;

    let wd: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
    let mut out = vec![0f32; n * cout * p_len];
    let mut cols = Vec::new();
    let mut acc = vec![0f64; p_len];
    for s in 0..n {
        let plane = &input.data()[s * c * h * w..(s + 1) * c * h * w];
        columns_f64(plane, c, h, w, geom, oh, ow, &mut cols);
        for co in 0..cout {
            acc.fill(bias.data()[co] as f64);
            let wrow = &wd[co * k_len..(co + 1) * k_len];
            for (k, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let col = &cols[k * p_len..(k + 1) * p_len];
                for (a, &x) in acc.iter_mut().zip(col) {
                    *a += wv * x;
                }
            }
            let dst = &mut out[(s * cout + co) * p_len..(s * cout + co + 1) * p_len];
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = a as f32;
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out)
}

/// Dot product with eight independent partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Gradients of [`conv2d_forward`]: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (cout, _) = check_conv(input, weight, bias)?;
    let (n, c, h, w) = input.dims4()?;
    let (_, _, kh, kw) = weight.dims4()?;
    let geom = ConvGeometry::new(kh, kw, stride, pad);
    let (oh, ow) = geom.out_hw(h, w)?;
    if grad_out.shape() != [n, cout, oh, ow] {
        return shape_err(format!(
            "conv upstream gradient {:?}, expected {:?}",
            grad_out.shape(),
            [n, cout, oh, ow]
        ));
    }
    let p_len = oh * ow;
    let k_len = c * kh * kw;
    let wd: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();

    let mut dw = vec![0f64; cout * k_len];
    let mut db = vec![0f64; cout];
    let mut dx = vec![0f32; n * c * h * w];
    let mut cols = Vec::new();
    let mut dcols = vec![0f64; k_len * p_len];
    let mut gy = vec![0f64; cout * p_len];
    let mut dx_plane = vec![0f64; c * h * w];
    for s in 0..n {
        let plane = &input.data()[s * c * h * w..(s + 1) * c * h * w];
        columns_f64(plane, c, h, w, geom, oh, ow, &mut cols);
        for (g, &v) in gy
            .iter_mut()
            .zip(&grad_out.data()[s * cout * p_len..(s + 1) * cout * p_len])
        {
            *g = v as f64;
        }
        dcols.fill(0.0);
        for co in 0..cout {
            let grow = &gy[co * p_len..(co + 1) * p_len];
            db[co] += grow.iter().sum::<f64>();
            for k in 0..k_len {
                let col = &cols[k * p_len..(k + 1) * p_len];
                dw[co * k_len + k] += dot(grow, col);
                let wv = wd[co * k_len + k];
                if wv != 0.0 {
                    let dcol = &mut dcols[k * p_len..(k + 1) * p_len];
                    for (d, &g) in dcol.iter_mut().zip(grow) {
                        *d += wv * g;
                    }
                }
            }
        }
        dx_plane.fill(0.0);
        col2im_add(&dcols, c, h, w, geom, oh, ow, &mut dx_plane);
        for (d, &v) in dx[s * c * h * w..(s + 1) * c * h * w]
            .iter_mut()
            .zip(&dx_plane)
        {
            *d = v as f32;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![cout], db.into_iter().map(|v| v as f32).collect())?,
    ))
}
