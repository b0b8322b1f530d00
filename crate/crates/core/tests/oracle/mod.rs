//! Explicit-loop reference implementations, written directly from the layer
//! definitions and sharing no code with the library beyond parameter lookup.
#![allow(dead_code, clippy::needless_range_loop)]

use adfl_core::attention::{ArrangementKind, Family};
use adfl_core::label::Fusion;
use adfl_core::model::ModelConfig;
use adfl_core::params::ParamStore;
use adfl_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A dense `[b, c, h, w]` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Grid {
    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self { b, c, h, w, v: vec![0.0; b * c * h * w] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Self { b: s[0], c: s[1], h: s[2], w: s[3], v: t.data().to_vec() }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.b, self.c, self.h, self.w], self.v.clone()).unwrap()
    }

    pub fn idx(&self, n: usize, ch: usize, y: usize, x: usize) -> usize {
        ((n * self.c + ch) * self.h + y) * self.w + x
    }

    pub fn at(&self, n: usize, ch: usize, y: usize, x: usize) -> f64 {
        self.v[self.idx(n, ch, y, x)]
    }

    pub fn set(&mut self, n: usize, ch: usize, y: usize, x: usize, val: f64) {
        let i = self.idx(n, ch, y, x);
        self.v[i] = val;
    }

    /// Spatial position `p = y·w + x`.
    pub fn at_p(&self, n: usize, ch: usize, p: usize) -> f64 {
        self.at(n, ch, p / self.w, p % self.w)
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }
}

pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Overwrites every parameter (including residual scales and biases) with
/// uniform values in `±scale`.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.params_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

pub fn param<'a>(store: &'a ParamStore, name: &str) -> &'a [f64] {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.get(id).tensor.data()
}

fn param_opt<'a>(store: &'a ParamStore, name: &str) -> Option<&'a [f64]> {
    store.find(name).map(|id| store.get(id).tensor.data())
}

pub fn buffer<'a>(store: &'a ParamStore, name: &str) -> &'a [f64] {
    store.buffers().iter().find(|b| b.name == name).unwrap_or_else(|| panic!("no buffer {name}")).tensor.data()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Convolution with `k ∈ {1, 3}`, zero padding `k / 2`, and the given stride.
/// Weight layout `[out, in, k, k]`.
pub fn conv(x: &Grid, weight: &[f64], bias: Option<&[f64]>, cout: usize, k: usize, stride: usize) -> Grid {
    let pad = k / 2;
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Grid::zeros(x.b, cout, oh, ow);
    for n in 0..x.b {
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for i in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = (y * stride + ky) as isize - pad as isize;
                                let sx = (xx * stride + kx) as isize - pad as isize;
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                acc += weight[((o * x.c + i) * k + ky) * k + kx] * x.at(n, i, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.set(n, o, y, xx, acc);
                }
            }
        }
    }
    out
}

/// 1×1 convolution named `{name}.weight` / `{name}.bias`.
pub fn pointwise(store: &ParamStore, name: &str, x: &Grid) -> Grid {
    let b = param_opt(store, &format!("{name}.bias"));
    let w = param(store, &format!("{name}.weight"));
    conv(x, w, b, w.len() / x.c, 1, 1)
}

fn residual(alpha: f64, branch: &Grid, x: &Grid) -> Grid {
    let mut out = x.clone();
    for (o, (b, v)) in out.v.iter_mut().zip(branch.v.iter().zip(&x.v)) {
        *o = b * alpha + v;
    }
    out
}

pub fn long_range_spatial(store: &ParamStore, name: &str, x: &Grid) -> (Grid, Vec<Vec<f64>>) {
    let q = pointwise(store, &format!("{name}.query"), x);
    let k = pointwise(store, &format!("{name}.key"), x);
    let v = pointwise(store, &format!("{name}.value"), x);
    let n = x.hw();
    let mut out = Grid::zeros(x.b, x.c, x.h, x.w);
    let mut maps = Vec::new();
    for s in 0..x.b {
        for j in 0..n {
            let logits: Vec<f64> = (0..n).map(|i| (0..q.c).map(|r| q.at_p(s, r, j) * k.at_p(s, r, i)).sum()).collect();
            let a = softmax(&logits);
            for ch in 0..x.c {
                let val: f64 = (0..n).map(|i| a[i] * v.at_p(s, ch, i)).sum();
                out.set(s, ch, j / x.w, j % x.w, val);
            }
            maps.push(a);
        }
    }
    (residual(param(store, &format!("{name}.alpha"))[0], &out, x), maps)
}

pub fn long_range_channel(store: &ParamStore, name: &str, x: &Grid) -> (Grid, Vec<Vec<f64>>) {
    let n = x.hw();
    let mut out = Grid::zeros(x.b, x.c, x.h, x.w);
    let mut maps = Vec::new();
    for s in 0..x.b {
        for c1 in 0..x.c {
            let logits: Vec<f64> =
                (0..x.c).map(|c2| (0..n).map(|p| x.at_p(s, c1, p) * x.at_p(s, c2, p)).sum()).collect();
            let a = softmax(&logits);
            for p in 0..n {
                let val: f64 = (0..x.c).map(|c2| a[c2] * x.at_p(s, c2, p)).sum();
                out.set(s, c1, p / x.w, p % x.w, val);
            }
            maps.push(a);
        }
    }
    (residual(param(store, &format!("{name}.alpha"))[0], &out, x), maps)
}

pub fn long_range_hyper(store: &ParamStore, name: &str, x: &Grid) -> (Grid, Vec<Vec<f64>>) {
    let q = pointwise(store, &format!("{name}.query"), x);
    let k = pointwise(store, &format!("{name}.key"), x);
    let v = pointwise(store, &format!("{name}.value"), x);
    let per = q.c * q.hw();
    let mut mixed = Grid::zeros(x.b, q.c, x.h, x.w);
    let mut maps = Vec::new();
    for s in 0..x.b {
        let flat = |g: &Grid, i: usize| g.v[s * per + i];
        for j in 0..per {
            let logits: Vec<f64> = (0..per).map(|i| flat(&q, j) * flat(&k, i)).collect();
            let a = softmax(&logits);
            mixed.v[s * per + j] = (0..per).map(|i| a[i] * flat(&v, i)).sum();
            maps.push(a);
        }
    }
    let restored = pointwise(store, &format!("{name}.restore"), &mixed);
    (residual(param(store, &format!("{name}.alpha"))[0], &restored, x), maps)
}

pub fn long_range_batch(store: &ParamStore, name: &str, x: &Grid) -> (Grid, Vec<Vec<f64>>) {
    let per = x.c * x.hw();
    let mut out = Grid::zeros(x.b, x.c, x.h, x.w);
    let mut maps = Vec::new();
    for a in 0..x.b {
        let logits: Vec<f64> = (0..x.b).map(|b| (0..per).map(|i| x.v[a * per + i] * x.v[b * per + i]).sum()).collect();
        let m = softmax(&logits);
        for i in 0..per {
            out.v[a * per + i] = (0..x.b).map(|b| m[b] * x.v[b * per + i]).sum();
        }
        maps.push(m);
    }
    (residual(param(store, &format!("{name}.alpha"))[0], &out, x), maps)
}

/// Spatial weights, one row of `h·w` per sample.
pub fn direct_spatial_map(store: &ParamStore, name: &str, x: &Grid) -> Vec<Vec<f64>> {
    let mut pooled = Grid::zeros(x.b, 2, x.h, x.w);
    for s in 0..x.b {
        for p in 0..x.hw() {
            let vals: Vec<f64> = (0..x.c).map(|ch| x.at_p(s, ch, p)).collect();
            pooled.set(s, 0, p / x.w, p % x.w, vals.iter().sum::<f64>() / x.c as f64);
            pooled.set(s, 1, p / x.w, p % x.w, vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    let w = param(store, &format!("{name}.merge.weight"));
    let b = param(store, &format!("{name}.merge.bias"));
    let logits = conv(&pooled, w, Some(b), 1, 3, 1);
    (0..x.b).map(|s| softmax(&logits.v[s * x.hw()..(s + 1) * x.hw()])).collect()
}

/// Channel weights, one row of `c` per sample.
pub fn direct_channel_map(store: &ParamStore, name: &str, x: &Grid) -> Vec<Vec<f64>> {
    let w1 = param(store, &format!("{name}.reduce.weight"));
    let b1 = param(store, &format!("{name}.reduce.bias"));
    let w2 = param(store, &format!("{name}.expand.weight"));
    let b2 = param(store, &format!("{name}.expand.bias"));
    let hidden = b1.len();
    let mlp = |v: &[f64]| -> Vec<f64> {
        let hdn: Vec<f64> =
            (0..hidden).map(|j| (b1[j] + (0..x.c).map(|i| w1[j * x.c + i] * v[i]).sum::<f64>()).max(0.0)).collect();
        (0..x.c).map(|i| b2[i] + (0..hidden).map(|j| w2[i * hidden + j] * hdn[j]).sum::<f64>()).collect()
    };
    (0..x.b)
        .map(|s| {
            let plane = |ch: usize| (0..x.hw()).map(move |p| x.at_p(s, ch, p));
            let avg: Vec<f64> = (0..x.c).map(|ch| plane(ch).sum::<f64>() / x.hw() as f64).collect();
            let max: Vec<f64> = (0..x.c).map(|ch| plane(ch).fold(f64::NEG_INFINITY, f64::max)).collect();
            let logits: Vec<f64> = mlp(&avg).iter().zip(mlp(&max)).map(|(a, m)| a + m).collect();
            softmax(&logits)
        })
        .collect()
}

pub fn direct_spatial(store: &ParamStore, name: &str, x: &Grid) -> (Grid, Vec<Vec<f64>>) {
    let maps = direct_spatial_map(store, name, x);
    let mut out = x.clone();
    for s in 0..x.b {
        for ch in 0..x.c {
            for p in 0..x.hw() {
                out.set(s, ch, p / x.w, p % x.w, x.at_p(s, ch, p) * maps[s][p]);
            }
        }
    }
    (out, maps)
}

pub fn direct_channel(store: &ParamStore, name: &str, x: &Grid) -> (Grid, Vec<Vec<f64>>) {
    let maps = direct_channel_map(store, name, x);
    let mut out = x.clone();
    for s in 0..x.b {
        for ch in 0..x.c {
            for p in 0..x.hw() {
                out.set(s, ch, p / x.w, p % x.w, x.at_p(s, ch, p) * maps[s][ch]);
            }
        }
    }
    (out, maps)
}

pub fn direct_hyper(x: &Grid) -> (Grid, Vec<Vec<f64>>) {
    let per = x.c * x.hw();
    let maps: Vec<Vec<f64>> = (0..x.b).map(|s| softmax(&x.v[s * per..(s + 1) * per])).collect();
    let mut out = x.clone();
    for s in 0..x.b {
        for i in 0..per {
            out.v[s * per + i] = x.v[s * per + i] * maps[s][i];
        }
    }
    (out, maps)
}

pub fn arrangement(store: &ParamStore, name: &str, family: Family, kind: ArrangementKind, x: &Grid) -> Grid {
    let sp = format!("{name}.spatial");
    let ch = format!("{name}.channel");
    let spatial = |g: &Grid| match family {
        Family::LongRange => long_range_spatial(store, &sp, g).0,
        Family::Direct => direct_spatial(store, &sp, g).0,
    };
    let channel = |g: &Grid| match family {
        Family::LongRange => long_range_channel(store, &ch, g).0,
        Family::Direct => direct_channel(store, &ch, g).0,
    };
    match kind {
        ArrangementKind::Sc => channel(&spatial(x)),
        ArrangementKind::Cs => spatial(&channel(x)),
        ArrangementKind::Sum => {
            let (s, c) = (spatial(x), channel(x));
            Grid { v: s.v.iter().zip(&c.v).map(|(a, b)| a + b).collect(), ..s }
        }
        ArrangementKind::Multiply => {
            let ms = direct_spatial_map(store, &sp, x);
            let mc = direct_channel_map(store, &ch, x);
            let mut out = x.clone();
            for s in 0..x.b {
                for c in 0..x.c {
                    for p in 0..x.hw() {
                        out.set(s, c, p / x.w, p % x.w, mc[s][c] * ms[s][p] * x.at_p(s, c, p));
                    }
                }
            }
            out
        }
    }
}

/// Any variant by its label, e.g. `1s`, `2c`, `1sum`, `2multiply`.
pub fn attention(store: &ParamStore, name: &str, label: &str, x: &Grid) -> Grid {
    let family = if label.starts_with('1') { Family::LongRange } else { Family::Direct };
    match (family, &label[1..]) {
        (Family::LongRange, "s") => long_range_spatial(store, name, x).0,
        (Family::LongRange, "c") => long_range_channel(store, name, x).0,
        (Family::LongRange, "h") => long_range_hyper(store, name, x).0,
        (Family::LongRange, "b") => long_range_batch(store, name, x).0,
        (Family::Direct, "s") => direct_spatial(store, name, x).0,
        (Family::Direct, "c") => direct_channel(store, name, x).0,
        (Family::Direct, "h") => direct_hyper(x).0,
        (_, "sc") => arrangement(store, name, family, ArrangementKind::Sc, x),
        (_, "cs") => arrangement(store, name, family, ArrangementKind::Cs, x),
        (_, "sum") => arrangement(store, name, family, ArrangementKind::Sum, x),
        (_, "multiply") => arrangement(store, name, family, ArrangementKind::Multiply, x),
        _ => panic!("unknown variant {label}"),
    }
}

/// Batch norm over axis 1 of `[n, c, inner]` data, with batch statistics
/// (biased variance) when `train`, otherwise the running buffers.
pub fn batchnorm(store: &ParamStore, name: &str, data: &[f64], n: usize, c: usize, train: bool) -> Vec<f64> {
    let inner = data.len() / (n * c);
    let gamma = param(store, &format!("{name}.weight"));
    let beta = param(store, &format!("{name}.bias"));
    let mut out = vec![0.0; data.len()];
    for ch in 0..c {
        let vals: Vec<f64> =
            (0..n).flat_map(|s| (0..inner).map(move |i| (s * c + ch) * inner + i)).map(|i| data[i]).collect();
        let (mean, var) = if train {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (m, vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
        } else {
            (buffer(store, &format!("{name}.running_mean"))[ch], buffer(store, &format!("{name}.running_var"))[ch])
        };
        let inv = 1.0 / (var + 1e-5).sqrt();
        for s in 0..n {
            for i in 0..inner {
                let at = (s * c + ch) * inner + i;
                out[at] = gamma[ch] * (data[at] - mean) * inv + beta[ch];
            }
        }
    }
    out
}

fn bn_relu(store: &ParamStore, name: &str, g: Grid, train: bool) -> Grid {
    let v = batchnorm(store, name, &g.v, g.b, g.c, train).into_iter().map(|v| v.max(0.0)).collect();
    Grid { v, ..g }
}

/// `conv3×3 → BN → ReLU → conv → BN → ReLU` with the named layers.
pub fn conv_pair(store: &ParamStore, name: &str, x: &Grid, k2: usize, stride: usize, train: bool) -> Grid {
    let w1 = param(store, &format!("{name}.conv1.weight"));
    let y = conv(x, w1, None, w1.len() / (x.c * 9), 3, stride);
    let y = bn_relu(store, &format!("{name}.bn1"), y, train);
    let w2 = param(store, &format!("{name}.conv2.weight"));
    let y2 = conv(&y, w2, None, w2.len() / (y.c * k2 * k2), k2, 1);
    bn_relu(store, &format!("{name}.bn2"), y2, train)
}

pub fn global_max(g: &Grid) -> Vec<f64> {
    let mut out = Vec::new();
    for s in 0..g.b {
        for ch in 0..g.c {
            out.push((0..g.hw()).map(|p| g.at_p(s, ch, p)).fold(f64::NEG_INFINITY, f64::max));
        }
    }
    out
}

/// `x Wᵀ + b` on `[n, in]` rows.
pub fn linear(store: &ParamStore, name: &str, x: &[f64], n: usize) -> Vec<f64> {
    let w = param(store, &format!("{name}.weight"));
    let b = param_opt(store, &format!("{name}.bias"));
    let din = x.len() / n;
    let dout = w.len() / din;
    let mut out = vec![0.0; n * dout];
    for s in 0..n {
        for o in 0..dout {
            out[s * dout + o] =
                b.map_or(0.0, |b| b[o]) + (0..din).map(|i| w[o * din + i] * x[s * din + i]).sum::<f64>();
        }
    }
    out
}

/// Head outputs of the reference network: `(pre_bn, embedding, logits)`.
pub type Head = (Vec<f64>, Vec<f64>, Vec<f64>);

pub struct NetOutputs {
    pub base: Head,
    pub skip: Option<Head>,
}

fn head(store: &ParamStore, name: &str, pre: Vec<f64>, n: usize, train: bool) -> Head {
    let dim = pre.len() / n;
    let emb = batchnorm(store, &format!("{name}.bn"), &pre, n, dim, train);
    let logits = linear(store, &format!("{name}.classifier"), &emb, n);
    (pre, emb, logits)
}

/// The whole network from its configuration and parameters.
pub fn network(cfg: &ModelConfig, store: &ParamStore, x: &Grid, train: bool, attn_label: Option<&str>) -> NetOutputs {
    let at = cfg.attn_position.stage();
    let mut stream = x.clone();
    let mut attended = None;
    for i in 0..4 {
        let stride = if i < 3 { 2 } else { 1 };
        stream = conv_pair(store, &format!("stage{}", i + 1), &stream, 3, stride, train);
        if at == Some(i + 1) {
            if let Some(label) = attn_label {
                stream = attention(store, "attn", label, &stream);
                attended = Some(stream.clone());
            }
        }
    }
    let n = x.b;
    let pooled = global_max(&stream);
    let pre = linear(store, "head.fc", &pooled, n);
    let base = head(store, "head", pre.clone(), n, train);
    let skip = match (cfg.af_skip, attended) {
        (true, Some(a)) => {
            let s = global_max(&conv_pair(store, "skip.block", &a, 1, 1, train));
            let (de, ds) = (pre.len() / n, s.len() / n);
            let fused: Vec<f64> = match cfg.fusion {
                Fusion::Cat => (0..n)
                    .flat_map(|r| pre[r * de..(r + 1) * de].iter().chain(&s[r * ds..(r + 1) * ds]).copied())
                    .collect(),
                Fusion::Sum => pre.iter().zip(&s).map(|(a, b)| a + b).collect(),
            };
            Some(head(store, "skip", fused, n, train))
        }
        _ => None,
    };
    NetOutputs { base, skip }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub mod fd;
