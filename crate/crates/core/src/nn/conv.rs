//! Direct 2-D cross-correlation and max pooling on NCHW buffers.
//!
//! Every output value is accumulated from zero over `(c_in, ki, kj)` in
//! ascending order and the bias is added last. Out-of-range taps under
//! zero padding are skipped rather than multiplied by zero.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::shape(format!(
            "(input {input} + 2*padding {padding} - kernel {kernel}) is not divisible by stride {stride}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl ConvGeom {
    pub fn new(
        (in_c, in_h, in_w): (usize, usize, usize),
        (out_c, kh, kw): (usize, usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            padding,
            out_h: out_len(in_h, kh, stride, padding)?,
            out_w: out_len(in_w, kw, stride, padding)?,
        })
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_plane()
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_plane()
    }

    pub fn kernel_len(&self) -> usize {
        self.out_c * self.in_c * self.kh * self.kw
    }
}

/// Output positions `o` in `[lo, hi)` for which `o * stride + offset - padding`
/// lands inside `[0, input)`.
fn valid_range(offset: usize, padding: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    if input + padding <= offset {
        return (0, 0);
    }
    let hi = ((input - 1 + padding - offset) / stride + 1).min(output);
    (lo.min(hi), hi)
}

pub(crate) fn forward(geom: &ConvGeom, batch: usize, x: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let g = geom;
    let mut out = vec![0.0; batch * g.out_len()];
    for n in 0..batch {
        let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
        for co in 0..g.out_c {
            let plane = &mut out[(n * g.out_c + co) * g.out_plane()..][..g.out_plane()];
            for ci in 0..g.in_c {
                let xc = &xn[ci * g.in_plane()..(ci + 1) * g.in_plane()];
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(ki, g.padding, g.stride, g.in_h, g.out_h);
                    for kj in 0..g.kw {
                        let wv = kernel[((co * g.in_c + ci) * g.kh + ki) * g.kw + kj];
                        let (ow_lo, ow_hi) = valid_range(kj, g.padding, g.stride, g.in_w, g.out_w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let xrow = &xc[ih * g.in_w..(ih + 1) * g.in_w];
                            let orow = &mut plane[oh * g.out_w..(oh + 1) * g.out_w];
                            for ow in ow_lo..ow_hi {
                                orow[ow] += wv * xrow[ow * g.stride + kj - g.padding];
                            }
                        }
                    }
                }
            }
            let b = bias[co];
            for v in plane.iter_mut() {
                *v += b;
            }
        }
    }
    out
}

pub(crate) fn backward_input(geom: &ConvGeom, batch: usize, grad_out: &[f64], kernel: &[f64]) -> Vec<f64> {
    let g = geom;
    let mut dx = vec![0.0; batch * g.in_len()];
    for n in 0..batch {
        let dxn = &mut dx[n * g.in_len()..(n + 1) * g.in_len()];
        for co in 0..g.out_c {
            let gplane = &grad_out[(n * g.out_c + co) * g.out_plane()..][..g.out_plane()];
            for ci in 0..g.in_c {
                let dxc = &mut dxn[ci * g.in_plane()..(ci + 1) * g.in_plane()];
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(ki, g.padding, g.stride, g.in_h, g.out_h);
                    for kj in 0..g.kw {
                        let wv = kernel[((co * g.in_c + ci) * g.kh + ki) * g.kw + kj];
                        let (ow_lo, ow_hi) = valid_range(kj, g.padding, g.stride, g.in_w, g.out_w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let grow = &gplane[oh * g.out_w..(oh + 1) * g.out_w];
                            let dxrow = &mut dxc[ih * g.in_w..(ih + 1) * g.in_w];
                            for ow in ow_lo..ow_hi {
                                dxrow[ow * g.stride + kj - g.padding] += wv * grow[ow];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Returns `(kernel_grad, bias_grad)`.
pub(crate) fn backward_params(geom: &ConvGeom, batch: usize, grad_out: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g = geom;
    let mut dk = vec![0.0; g.kernel_len()];
    let mut db = vec![0.0; g.out_c];
    for n in 0..batch {
        let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
        for co in 0..g.out_c {
            let gplane = &grad_out[(n * g.out_c + co) * g.out_plane()..][..g.out_plane()];
            db[co] += gplane.iter().sum::<f64>();
            for ci in 0..g.in_c {
                let xc = &xn[ci * g.in_plane()..(ci + 1) * g.in_plane()];
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(ki, g.padding, g.stride, g.in_h, g.out_h);
                    for kj in 0..g.kw {
                        let (ow_lo, ow_hi) = valid_range(kj, g.padding, g.stride, g.in_w, g.out_w);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let grow = &gplane[oh * g.out_w..(oh + 1) * g.out_w];
                            let xrow = &xc[ih * g.in_w..(ih + 1) * g.in_w];
                            for ow in ow_lo..ow_hi {
                                acc += grow[ow] * xrow[ow * g.stride + kj - g.padding];
                            }
                        }
                        dk[((co * g.in_c + ci) * g.kh + ki) * g.kw + kj] += acc;
                    }
                }
            }
        }
    }
    (dk, db)
}

/// Cross-correlation of an NCHW batch with a `[c_out, c_in, kh, kw]` kernel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (&[b, c, h, w], &[co, ci, kh, kw]) = (input.shape(), kernel.shape()) else {
        return Err(Error::shape(format!(
            "conv2d expects 4-D input and kernel, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    };
    if ci != c {
        return Err(Error::shape(format!(
            "kernel expects {ci} input channels, input has {c}"
        )));
    }
    if bias.len() != co {
        return Err(Error::shape(format!(
            "bias has {} entries for {co} output channels",
            bias.len()
        )));
    }
    let geom = ConvGeom::new((c, h, w), (co, kh, kw), stride, padding)?;
    let out = forward(&geom, b, input.data(), kernel.data(), bias.data());
    Tensor::new(vec![b, co, geom.out_h, geom.out_w], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub size: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new((channels, in_h, in_w): (usize, usize, usize), size: usize, stride: usize) -> Result<Self> {
        if in_h < size || in_w < size {
            return Err(Error::shape(format!(
                "pool window {size} larger than input {in_h}x{in_w}"
            )));
        }
        Ok(Self {
            channels,
            in_h,
            in_w,
            size,
            stride,
            out_h: (in_h - size) / stride + 1,
            out_w: (in_w - size) / stride + 1,
        })
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

}

/// Max pooling; the returned argmax holds flat input offsets (first maximum wins).
pub(crate) fn maxpool_forward(geom: &PoolGeom, batch: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let g = geom;
    let planes = batch * g.channels;
    let mut out = Vec::with_capacity(planes * g.out_h * g.out_w);
    let mut argmax = Vec::with_capacity(out.capacity());
    for p in 0..planes {
        let base = p * g.in_h * g.in_w;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = base + oh * g.stride * g.in_w + ow * g.stride;
                for i in 0..g.size {
                    for j in 0..g.size {
                        let at = base + (oh * g.stride + i) * g.in_w + ow * g.stride + j;
                        if x[at] > best {
                            best = x[at];
                            best_at = at;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_at);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward(input_len: usize, grad_out: &[f64], argmax: &[usize]) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (g, &at) in grad_out.iter().zip(argmax) {
        dx[at] += g;
    }
    dx
}
