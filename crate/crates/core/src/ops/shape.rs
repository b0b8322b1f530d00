//! Matrix products and layout operations: reshape, permute, concatenate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{slot, Op, Tape, Var};
use crate::tensor::{numel_of, Tensor};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], g: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Splits `[.., m, k] x [.., k, n]` into (batch, m, k, n).
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n)),
        ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => Ok((*ba, *m, *k, *n)),
        _ => Err(Error::dim("matmul", a, b)),
    }
}

pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>], va: Var, vb: Var) {
    let (batch, m, k, n) = matmul_dims(a.shape(), b.shape()).unwrap();
    {
        let ga = slot(grads, va, a.numel());
        for s in 0..batch {
            gemm_nt(
                m,
                n,
                k,
                &g[s * m * n..(s + 1) * m * n],
                &b.data()[s * k * n..(s + 1) * k * n],
                &mut ga[s * m * k..(s + 1) * m * k],
            );
        }
    }
    let gb = slot(grads, vb, b.numel());
    for s in 0..batch {
        gemm_tn(
            m,
            k,
            n,
            &a.data()[s * m * k..(s + 1) * m * k],
            &g[s * m * n..(s + 1) * m * n],
            &mut gb[s * k * n..(s + 1) * k * n],
        );
    }
}

fn permuted(t: &Tensor, axes: &[usize]) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    // Stride in the input for each output axis.
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; rank];
    let src = t.data();
    for _ in 0..t.numel() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out).unwrap()
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn permute_backward(x: &Tensor, axes: &[usize], g: &[f64], grads: &mut [Option<Vec<f64>>], vx: Var) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let gt = Tensor::new(&out_shape, g.to_vec()).unwrap();
    let back = permuted(&gt, &inverse_axes(axes));
    let acc = slot(grads, vx, x.numel());
    for (a, v) in acc.iter_mut().zip(back.data()) {
        *a += v;
    }
}

pub(crate) fn concat_backward(shapes: &[&[usize]], axis: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], xs: &[Var]) {
    let outer: usize = shapes[0][..axis].iter().product();
    let widths: Vec<usize> = shapes.iter().map(|s| s[axis..].iter().product()).collect();
    let total: usize = widths.iter().sum();
    let mut offset = 0;
    for ((v, shape), &w) in xs.iter().zip(shapes).zip(&widths) {
        let acc = slot(grads, *v, numel_of(shape));
        for o in 0..outer {
            let src = &g[o * total + offset..o * total + offset + w];
            for (a, s) in acc[o * w..(o + 1) * w].iter_mut().zip(src) {
                *a += s;
            }
        }
        offset += w;
    }
}

impl Tape {
    /// Matrix product of rank-2 operands, or a batched product of rank-3 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (batch, m, k, n) = matmul_dims(at.shape(), bt.shape())?;
        let mut out = vec![0.0; batch * m * n];
        for s in 0..batch {
            gemm_nn(
                m,
                k,
                n,
                &at.data()[s * m * k..(s + 1) * m * k],
                &bt.data()[s * k * n..(s + 1) * k * n],
                &mut out[s * m * n..(s + 1) * m * n],
            );
        }
        let shape = if at.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b)))
    }

    /// Row-major reshape; `shape` must keep the element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.rank()];
        if axes.len() != t.rank() || axes.iter().any(|&a| a >= seen.len() || core::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim("permute", t.shape(), axes));
        }
        let v = permuted(t, axes);
        Ok(self.push(v, Op::Permute(x, axes.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(Error::Rank { op: "transpose", expected: 2, shape: self.shape(x).to_vec() });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(x, &axes)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Rank { op: "concat", expected: axis + 1, shape: first });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for v in xs {
            let s = self.shape(*v);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(numel_of(&out_shape));
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let w: usize = t.shape()[axis..].iter().product();
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let v = Tensor::new(&out_shape, data)?;
        Ok(self.push(v, Op::Concat(xs.to_vec(), axis)))
    }
}
