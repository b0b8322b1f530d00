//! 2-D convolution for the two kernel shapes the network uses: 1×1 and 3×3
//! with one pixel of zero padding. Implemented as im2col + GEMM per sample.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::shape::{gemm_nn, gemm_nt, gemm_tn};
use crate::tape::{slot, Op, Tape, Var};
use crate::tensor::{dims4, Tensor};

/// Kernel footprint of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvKind {
    OneByOne,
    /// 3×3 kernel, padding 1.
    ThreeByThreePad1,
}

impl ConvKind {
    pub fn size(self) -> usize {
        match self {
            ConvKind::OneByOne => 1,
            ConvKind::ThreeByThreePad1 => 3,
        }
    }

    fn pad(self) -> usize {
        self.size() / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kind: ConvKind,
    pub stride: usize,
}

impl ConvGeometry {
    pub const ONE: Self = Self { kind: ConvKind::OneByOne, stride: 1 };
    pub const THREE: Self = Self { kind: ConvKind::ThreeByThreePad1, stride: 1 };

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kind.size();
        let p = self.kind.pad();
        ((h + 2 * p - k) / self.stride + 1, (w + 2 * p - k) / self.stride + 1)
    }
}

pub(crate) struct ConvRecord {
    pub x: Var,
    pub weight: Var,
    pub geom: ConvGeometry,
}

struct Plan {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    k: usize,
    pad: usize,
    stride: usize,
}

impl Plan {
    fn new(x: &[usize], weight: &[usize], geom: ConvGeometry) -> Result<Self> {
        let (b, cin, h, w) = dims4(x, "conv2d")?;
        let k = geom.kind.size();
        match *weight {
            [cout, wc, kh, kw] if wc == cin && kh == k && kw == k => {
                let (ho, wo) = geom.output_hw(h, w);
                Ok(Plan { b, cin, h, w, cout, ho, wo, k, pad: geom.kind.pad(), stride: geom.stride })
            }
            _ => Err(Error::dim("conv2d", x, weight)),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (k, hw) = (self.k, self.ho * self.wo);
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &x[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let (k, hw) = (self.k, self.ho * self.wo);
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut gx[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let p = Plan::new(x.shape(), weight.shape(), geom)?;
    let (in_sz, out_sz) = (p.cin * p.h * p.w, p.cout * p.ho * p.wo);
    let hw = p.ho * p.wo;
    let mut out = vec![0.0; p.b * out_sz];
    let mut cols = if p.is_pointwise() { Vec::new() } else { vec![0.0; p.col_rows() * hw] };
    for s in 0..p.b {
        let xs = &x.data()[s * in_sz..(s + 1) * in_sz];
        let dst = &mut out[s * out_sz..(s + 1) * out_sz];
        if p.is_pointwise() {
            gemm_nn(p.cout, p.cin, hw, weight.data(), xs, dst);
        } else {
            p.im2col(xs, &mut cols);
            gemm_nn(p.cout, p.col_rows(), hw, weight.data(), &cols, dst);
        }
    }
    Tensor::new(&[p.b, p.cout, p.ho, p.wo], out)
}

pub(crate) fn conv2d_backward(tape: &Tape, rec: &ConvRecord, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let (x, weight) = (tape.value(rec.x), tape.value(rec.weight));
    let p = Plan::new(x.shape(), weight.shape(), rec.geom).unwrap();
    let (in_sz, out_sz) = (p.cin * p.h * p.w, p.cout * p.ho * p.wo);
    let hw = p.ho * p.wo;
    let rows = p.col_rows();
    let mut cols = if p.is_pointwise() { Vec::new() } else { vec![0.0; rows * hw] };
    let mut gw = vec![0.0; weight.numel()];
    let mut gx = vec![0.0; x.numel()];
    let mut gcols = vec![0.0; rows * hw];
    for s in 0..p.b {
        let xs = &x.data()[s * in_sz..(s + 1) * in_sz];
        let gs = &g[s * out_sz..(s + 1) * out_sz];
        let gxs = &mut gx[s * in_sz..(s + 1) * in_sz];
        if p.is_pointwise() {
            gemm_nt(p.cout, hw, p.cin, gs, xs, &mut gw);
            gemm_tn(p.cout, p.cin, hw, weight.data(), gs, gxs);
        } else {
            p.im2col(xs, &mut cols);
            gemm_nt(p.cout, hw, rows, gs, &cols, &mut gw);
            gcols.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(p.cout, rows, hw, weight.data(), gs, &mut gcols);
            p.col2im(&gcols, gxs);
        }
    }
    for (a, v) in slot(grads, rec.weight, gw.len()).iter_mut().zip(&gw) {
        *a += v;
    }
    for (a, v) in slot(grads, rec.x, gx.len()).iter_mut().zip(&gx) {
        *a += v;
    }
}

impl Tape {
    /// Convolution of `x: [B, Cin, H, W]` with `weight: [Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, geom: ConvGeometry) -> Result<Var> {
        let v = conv2d_forward(self.value(x), self.value(weight), geom)?;
        Ok(self.push(v, Op::Conv2d(ConvRecord { x, weight, geom })))
    }
}
