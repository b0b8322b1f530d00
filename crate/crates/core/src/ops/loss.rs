//! Identity classification and metric-learning losses.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::ops::softmax::softmax_rows;
use crate::tape::{slot, Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct XentRecord {
    logits: Var,
    probs: Vec<f64>,
    labels: Vec<usize>,
}

pub(crate) fn xent_backward(rec: &XentRecord, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let b = rec.labels.len();
    let n = rec.probs.len() / b;
    let acc = slot(grads, rec.logits, rec.probs.len());
    for (s, &label) in rec.labels.iter().enumerate() {
        for j in 0..n {
            let onehot = if j == label { 1.0 } else { 0.0 };
            acc[s * n + j] += g[0] * (rec.probs[s * n + j] - onehot) / b as f64;
        }
    }
}

/// Batch-hard triplet selection for one batch.
pub(crate) struct TripletRecord {
    feats: Var,
    positive: Vec<usize>,
    negative: Vec<usize>,
    d_pos: Vec<f64>,
    d_neg: Vec<f64>,
    active: Vec<bool>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub(crate) fn triplet_backward(tape: &Tape, rec: &TripletRecord, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let f = tape.value(rec.feats);
    let (b, d) = (f.shape()[0], f.shape()[1]);
    let fd = f.data();
    let scale = g[0] / b as f64;
    let acc = slot(grads, rec.feats, f.numel());
    // d||u - v|| / du = (u - v) / ||u - v||; zero at coincident points.
    let mut pull = |from: usize, to: usize, dist: f64, sign: f64| {
        if dist <= 0.0 {
            return;
        }
        for k in 0..d {
            let diff = (fd[from * d + k] - fd[to * d + k]) / dist * sign * scale;
            acc[from * d + k] += diff;
            acc[to * d + k] -= diff;
        }
    };
    for a in 0..b {
        if rec.active[a] {
            pull(a, rec.positive[a], rec.d_pos[a], 1.0);
            pull(a, rec.negative[a], rec.d_neg[a], -1.0);
        }
    }
}

/// Checks that every label has a positive partner and that some negative exists.
pub fn check_triplet_labels(labels: &[usize]) -> Result<()> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if let Some((label, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Contract(format!("triplet loss: label {label} has a single sample")));
    }
    if counts.len() < 2 {
        let label = labels.first().copied().unwrap_or_default();
        return Err(Error::Contract(format!("triplet loss: batch holds only label {label}, no negatives")));
    }
    Ok(())
}

impl Tape {
    /// Mean cross-entropy of `logits: [B, N]` against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let [b, n] = *t.shape() else {
            return Err(Error::Rank { op: "softmax_xent", expected: 2, shape: t.shape().to_vec() });
        };
        if labels.len() != b {
            return Err(Error::dim("softmax_xent", t.shape(), &[labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Contract(format!("label {bad} outside [0, {n})")));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "softmax_xent" });
        }
        let mut probs = vec![0.0; b * n];
        softmax_rows(t.data(), n, &mut probs);
        let mut loss = 0.0;
        for (s, &l) in labels.iter().enumerate() {
            let row = &t.data()[s * n..(s + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|v| math::exp(v - max)).sum::<f64>());
            loss += lse - row[l];
        }
        let v = Tensor::scalar(loss / b as f64);
        Ok(self.push(v, Op::SoftmaxXent(XentRecord { logits, probs, labels: labels.to_vec() })))
    }

    /// Batch-hard triplet loss on `feats: [B, d]` with Euclidean distances.
    ///
    /// For each anchor the farthest same-label sample and the nearest other-label
    /// sample are selected (first index on ties); the loss is the mean hinge
    /// `max(0, d_pos - d_neg + margin)`.
    pub fn batch_hard_triplet(&mut self, feats: Var, labels: &[usize], margin: f64) -> Result<Var> {
        let t = self.value(feats);
        let [b, d] = *t.shape() else {
            return Err(Error::Rank { op: "batch_hard_triplet", expected: 2, shape: t.shape().to_vec() });
        };
        if labels.len() != b {
            return Err(Error::dim("batch_hard_triplet", t.shape(), &[labels.len()]));
        }
        check_triplet_labels(labels)?;
        let fd = t.data();
        let row = |i: usize| &fd[i * d..(i + 1) * d];
        let mut rec = TripletRecord {
            feats,
            positive: vec![0; b],
            negative: vec![0; b],
            d_pos: vec![0.0; b],
            d_neg: vec![0.0; b],
            active: vec![false; b],
        };
        let mut total = 0.0;
        for a in 0..b {
            let (mut hp, mut hn) = (None::<(usize, f64)>, None::<(usize, f64)>);
            for j in 0..b {
                if j == a {
                    continue;
                }
                let dist = euclidean(row(a), row(j));
                if labels[j] == labels[a] {
                    if hp.is_none_or(|(_, best)| dist > best) {
                        hp = Some((j, dist));
                    }
                } else if hn.is_none_or(|(_, best)| dist < best) {
                    hn = Some((j, dist));
                }
            }
            let ((p, dp), (n, dn)) = (hp.unwrap(), hn.unwrap());
            rec.positive[a] = p;
            rec.negative[a] = n;
            rec.d_pos[a] = dp;
            rec.d_neg[a] = dn;
            let hinge = dp - dn + margin;
            if hinge > 0.0 {
                rec.active[a] = true;
                total += hinge;
            }
        }
        let v = Tensor::scalar(total / b as f64);
        Ok(self.push(v, Op::Triplet(rec)))
    }
}
