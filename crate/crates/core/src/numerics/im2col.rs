use crate::error::{shape_err, Result};

use super::Tensor;

/// Kernel geometry of a zero-padded 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        Self {
            kh,
            kw,
            stride,
            pad,
        }
    }

    /// Output extent along one axis, or an error when the geometry does not tile.
    pub fn out_extent(&self, size: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return shape_err("stride must be positive");
        }
        let padded = size + 2 * self.pad;
        if padded < k {
            return shape_err(format!("kernel {k} larger than padded input {padded}"));
        }
        if !(padded - k).is_multiple_of(self.stride) {
            return shape_err(format!(
                "non-integer output extent: ({size} + 2*{} - {k}) / {} is fractional",
                self.pad, self.stride
            ));
        }
        Ok((padded - k) / self.stride + 1)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.out_extent(h, self.kh)?, self.out_extent(w, self.kw)?))
    }
}

/// Which input the patches came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchProvenance {
    pub layer: Option<String>,
    /// `(sample, spatial position)` per row, positions linear over `H'×W'`.
    pub rows: Vec<(usize, usize)>,
}

/// One receptive field per row: `rows = positions`, `cols = Cin·Kh·Kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub provenance: PatchProvenance,
}

impl PatchMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Flattened receptive fields of `input` for the given kernel geometry.
///
/// `positions` indexes output cells linearly over `N×H'×W'`; `None` takes all
/// of them in order.
pub fn im2col(
    input: &Tensor,
    geom: ConvGeometry,
    positions: Option<&[usize]>,
) -> Result<PatchMatrix> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = geom.out_hw(h, w)?;
    let per_sample = oh * ow;
    let total = n * per_sample;
    let all: Vec<usize>;
    let positions = match positions {
        Some(p) => p,
        None => {
            all = (0..total).collect();
            &all
        }
    };
    let cols = c * geom.kh * geom.kw;
    let mut data = Vec::with_capacity(positions.len() * cols);
    let mut prov = Vec::with_capacity(positions.len());
    let x = input.data();
    for &pos in positions {
        if pos >= total {
            return shape_err(format!("patch position {pos} out of range (have {total})"));
        }
        let s = pos / per_sample;
        let p = pos % per_sample;
        let (oy, ox) = (p / ow, p % ow);
        for ci in 0..c {
            let plane = &x[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
            for ky in 0..geom.kh {
                let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                for kx in 0..geom.kw {
                    let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                    let v = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        plane[iy as usize * w + ix as usize]
                    } else {
                        0.0
                    };
                    data.push(v);
                }
            }
        }
        prov.push((s, p));
    }
    Ok(PatchMatrix {
        rows: positions.len(),
        cols,
        data,
        provenance: PatchProvenance {
            layer: None,
            rows: prov,
        },
    })
}

/// Column layout used by the convolution kernels: `K×P` in `f64`, where
/// `K = C·Kh·Kw` and `P = H'·W'` for a single sample plane stack.
pub(crate) fn columns_f64(
    plane: &[f32],
    c: usize,
    h: usize,
    w: usize,
    geom: ConvGeometry,
    oh: usize,
    ow: usize,
    out: &mut Vec<f64>,
) {
    let p_len = oh * ow;
    out.clear();
    out.resize(c * geom.kh * geom.kw * p_len, 0.0);
    let mut row = 0;
    for ci in 0..c {
        let src = &plane[ci * h * w..(ci + 1) * h * w];
        for ky in 0..geom.kh {
            for kx in 0..geom.kw {
                let dst = &mut out[row * p_len..(row + 1) * p_len];
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            *d = src_row[ix as usize] as f64;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a `K×P` column gradient back onto a `C×H×W` plane stack.
pub(crate) fn col2im_add(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    geom: ConvGeometry,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let p_len = oh * ow;
    let mut row = 0;
    for ci in 0..c {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..geom.kh {
            for kx in 0..geom.kw {
                let src = &cols[row * p_len..(row + 1) * p_len];
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[iy as usize * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
