//! Property tests for attention maps, losses, metrics, schedule, sampler and optimizer.

mod oracle;

use adfl_core::attention::{
    DirectChannel, DirectHyper, DirectSpatial, LongRangeBatch, LongRangeChannel, LongRangeHyper, LongRangeSpatial,
};
use adfl_core::eval::{evaluate, EvalConfig, GallerySet, Protocol};
use adfl_core::label::VariantLabel;
use adfl_core::params::ParamStore;
use adfl_core::train::adam::{adam_step, AdamConfig, Moments};
use adfl_core::train::sampler::{sample_batch, SamplerConfig};
use adfl_core::train::schedule::{lr_at, LrSchedule};
use adfl_core::{Ctx, Mode, Tape, Tensor, Var};
use proptest::prelude::*;

fn input(values: Vec<f64>, shape: [usize; 4]) -> Tensor {
    Tensor::new(&shape, values).unwrap()
}

/// Every attention map of the seven single variants, flattened to rows.
fn maps(x: &Tensor, seed: u64) -> Vec<(&'static str, Vec<Vec<f64>>)> {
    let c = x.shape()[1];
    let mut store = ParamStore::new(seed);
    let ls = LongRangeSpatial::new(&mut store, "ls", c).unwrap();
    let lc = LongRangeChannel::new(&mut store, "lc").unwrap();
    let lh = LongRangeHyper::new(&mut store, "lh", c).unwrap();
    let lb = LongRangeBatch::new(&mut store, "lb").unwrap();
    let ds = DirectSpatial::new(&mut store, "ds").unwrap();
    let dc = DirectChannel::new(&mut store, "dc", c).unwrap();
    oracle::randomize(&mut store, seed, 0.5);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let v = ctx.input(x.clone());
    let mut named: Vec<(&'static str, Var, usize)> = vec![
        ("1s", ls.attend(&mut ctx, v).unwrap().map, x.shape()[2] * x.shape()[3]),
        ("1c", lc.attend(&mut ctx, v).unwrap().map, c),
        ("1b", lb.attend(&mut ctx, v).unwrap().map, x.shape()[0]),
    ];
    let hyper = lh.attend(&mut ctx, v).unwrap().map;
    let hyper_row = *ctx.value(hyper).shape().last().unwrap();
    named.push(("1h", hyper, hyper_row));
    named.push(("2s", ds.map(&mut ctx, v).unwrap(), x.shape()[2] * x.shape()[3]));
    named.push(("2c", dc.map(&mut ctx, v).unwrap(), c));
    named.push(("2h", DirectHyper.map(&mut ctx, v).unwrap(), x.numel() / x.shape()[0]));
    named
        .into_iter()
        .map(|(name, var, row)| (name, ctx.value(var).data().chunks(row).map(<[f64]>::to_vec).collect()))
        .collect()
}

fn shape_and_values(max_abs: f64) -> impl Strategy<Value = ([usize; 4], Vec<f64>)> {
    (2usize..=3, 1usize..=8, 1usize..=3, 1usize..=3).prop_flat_map(move |(b, c, h, w)| {
        (Just([b, c, h, w]), proptest::collection::vec(-max_abs..max_abs, b * c * h * w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_maps_are_row_stochastic((shape, values) in shape_and_values(1.0), seed in 0u64..1000) {
        for (name, rows) in maps(&input(values, shape), seed) {
            for r in rows {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{name}");
                prop_assert!(r.iter().all(|v| v.is_finite() && *v >= 0.0), "{name}");
            }
        }
    }

    #[test]
    fn attention_maps_survive_large_inputs((shape, values) in shape_and_values(1e4), seed in 0u64..1000) {
        for (name, rows) in maps(&input(values, shape), seed) {
            for r in rows {
                prop_assert!(r.iter().all(|v| v.is_finite()), "{name}");
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{name}");
            }
        }
    }
}

/// Labels where every identity has at least two samples and at least two identities exist.
fn triplet_labels() -> impl Strategy<Value = Vec<usize>> {
    (2usize..=4)
        .prop_flat_map(|ids| proptest::collection::vec(2usize..=3, ids))
        .prop_map(|counts| {
            counts.iter().enumerate().flat_map(|(id, &n)| std::iter::repeat_n(id, n)).collect::<Vec<_>>()
        })
        .prop_filter("batch of at most 8", |l| l.len() <= 8)
        .prop_shuffle()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn batch_hard_triplet_equals_enumeration(
        labels in triplet_labels(),
        dim in 1usize..=4,
        seed in 0u64..10_000,
        margin in 0.0f64..1.0,
    ) {
        let n = labels.len();
        let feats = oracle::random_tensor(&[n, dim], seed, 1.0);
        let f = |i: usize| &feats.data()[i * dim..(i + 1) * dim];
        // hinge of every (anchor, positive, negative) triple; batch-hard keeps the worst per anchor
        let mut total = 0.0;
        for a in 0..n {
            let mut worst = 0.0f64;
            for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
                for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                    worst = worst.max(dist(f(a), f(p)) - dist(f(a), f(q)) + margin);
                }
            }
            total += worst;
        }
        let mut tape = Tape::new();
        let v = tape.leaf(feats.clone());
        let l = tape.batch_hard_triplet(v, &labels, margin).unwrap();
        prop_assert_eq!(tape.value(l).item(), total / n as f64);
    }
}

#[derive(Debug)]
struct Case {
    q: GallerySet,
    g: GallerySet,
}

/// Integer-valued features so distance ties occur.
fn retrieval_case() -> impl Strategy<Value = Case> {
    (1usize..=4, 2usize..=10, 1usize..=3).prop_flat_map(|(nq, ng, d)| {
        (
            proptest::collection::vec(-2i32..=2, nq * d),
            proptest::collection::vec(-2i32..=2, ng * d),
            proptest::collection::vec((0usize..3, 0usize..2), nq),
            proptest::collection::vec((0usize..3, 0usize..2), ng),
        )
            .prop_map(move |(qf, gf, ql, gl)| {
                let set = |f: Vec<i32>, l: Vec<(usize, usize)>, n| {
                    let t = Tensor::new(&[n, d], f.into_iter().map(f64::from).collect()).unwrap();
                    GallerySet::new(t, l.iter().map(|x| x.0).collect(), l.iter().map(|x| x.1).collect(), "t").unwrap()
                };
                Case { q: set(qf, ql, nq), g: set(gf, gl, ng) }
            })
    })
}

/// CMC and mAP by counting, for each gallery item, how many valid items outrank it.
fn brute_force(c: &Case, protocol: Protocol) -> Option<(Vec<f64>, f64)> {
    let d = c.q.features.shape()[1];
    let ng = c.g.len();
    let mut cmc = vec![0.0; ng];
    let mut ap_sum = 0.0;
    for qi in 0..c.q.len() {
        let qf = &c.q.features.data()[qi * d..(qi + 1) * d];
        let dq: Vec<f64> = (0..ng).map(|j| dist(qf, &c.g.features.data()[j * d..(j + 1) * d])).collect();
        let valid = |j: usize| {
            !(protocol == Protocol::CrossCamera
                && c.g.identities[j] == c.q.identities[qi]
                && c.g.cameras[j] == c.q.cameras[qi])
        };
        let rank = |j: usize| 1 + (0..ng).filter(|&k| valid(k) && (dq[k] < dq[j] || (dq[k] == dq[j] && k < j))).count();
        let mut relevant: Vec<usize> =
            (0..ng).filter(|&j| valid(j) && c.g.identities[j] == c.q.identities[qi]).map(rank).collect();
        if relevant.is_empty() {
            return None;
        }
        relevant.sort_unstable();
        cmc[relevant[0] - 1..].iter_mut().for_each(|v| *v += 1.0);
        let ap: f64 = relevant.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum();
        ap_sum += ap / relevant.len() as f64;
    }
    let nq = c.q.len() as f64;
    Some((cmc.iter().map(|v| v / nq).collect(), ap_sum / nq))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_equal_brute_force(case in retrieval_case(), cross in any::<bool>()) {
        let protocol = if cross { Protocol::CrossCamera } else { Protocol::Plain };
        let cfg = EvalConfig { protocol, normalize: false, ..Default::default() };
        match (evaluate(&case.q, &case.g, cfg), brute_force(&case, protocol)) {
            (Ok(r), Some((cmc, map))) => {
                prop_assert_eq!(r.cmc, cmc);
                prop_assert_eq!(r.map, map);
            }
            (Err(adfl_core::Error::Protocol { .. }), None) => {}
            (got, want) => prop_assert!(false, "library {:?} vs oracle {:?}", got.map(|r| r.map), want),
        }
    }

    #[test]
    fn cmc_is_monotone_and_reaches_one(case in retrieval_case()) {
        if let Ok(r) = evaluate(&case.q, &case.g, EvalConfig { protocol: Protocol::Plain, normalize: true, ..Default::default() }) {
            prop_assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*r.cmc.last().unwrap(), 1.0);
            prop_assert!(r.per_query_ap.iter().all(|ap| (0.0..=1.0).contains(ap)));
        }
    }

    #[test]
    fn gallery_order_does_not_matter(seed in 0u64..10_000, ng in 2usize..=10, rot in 0usize..10) {
        // continuous features: no distance ties, so order cannot matter
        let feats = oracle::random_tensor(&[ng + 2, 3], seed, 1.0);
        let ids: Vec<usize> = (0..ng).map(|i| i % 3).collect();
        let q = GallerySet::new(Tensor::new(&[2, 3], feats.data()[..6].to_vec()).unwrap(), vec![0, 1], vec![9, 9], "t").unwrap();
        let mut order: Vec<usize> = (0..ng).collect();
        order.rotate_left(rot % ng);
        order.reverse();
        let build = |ord: &[usize]| {
            let rows: Vec<f64> = ord.iter().flat_map(|&i| feats.data()[(i + 2) * 3..(i + 3) * 3].to_vec()).collect();
            GallerySet::new(Tensor::new(&[ng, 3], rows).unwrap(), ord.iter().map(|&i| ids[i]).collect(), vec![0; ng], "t").unwrap()
        };
        let natural: Vec<usize> = (0..ng).collect();
        let a = evaluate(&q, &build(&natural), EvalConfig::default()).unwrap();
        let b = evaluate(&q, &build(&order), EvalConfig::default()).unwrap();
        prop_assert_eq!(a.cmc, b.cmc);
        prop_assert!((a.map - b.map).abs() < 1e-15);
    }
}

#[test]
fn hand_case_average_precision() {
    // relevant items at ranks 1 and 3: AP = (1/1 + 2/3) / 2
    let q = GallerySet::new(Tensor::new(&[1, 1], vec![0.0]).unwrap(), vec![7], vec![0], "t").unwrap();
    let g =
        GallerySet::new(Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap(), vec![7, 8, 7], vec![1; 3], "t").unwrap();
    let r = evaluate(&q, &g, EvalConfig { protocol: Protocol::CrossCamera, normalize: false, ..Default::default() })
        .unwrap();
    assert!((r.map - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(r.cmc, vec![1.0, 1.0, 1.0]);
}

#[test]
fn schedule_matches_warmup_and_steps() {
    let expect = |t: f64| -> f64 {
        if t <= 20.0 {
            3e-6 + (3.5e-4 - 3e-6) * t / 20.0
        } else if t <= 80.0 {
            3.5e-4
        } else if t <= 130.0 {
            3.5e-5
        } else {
            3.5e-6
        }
    };
    for t in [0.0, 10.0, 20.0, 50.0, 80.0, 81.0, 100.0, 130.0, 131.0, 150.0] {
        assert!((lr_at(t).unwrap() - expect(t)).abs() <= f64::EPSILON * expect(t), "t = {t}");
    }
    assert_eq!(lr_at(20.0).unwrap(), 3.5e-4);
    assert_eq!(lr_at(100.0).unwrap(), 3.5e-5);
    assert!(lr_at(-1.0).is_err() && lr_at(151.0).is_err());
}

proptest! {
    #[test]
    fn scaled_schedule_is_a_time_rescaling(t in 0.0f64..=150.0, scale in 0.05f64..2.0) {
        let s = LrSchedule::scaled(scale).unwrap();
        let t_scaled = (t * scale).min(s.total_epochs());
        let (a, b) = (s.lr_at(t_scaled).unwrap(), lr_at(t).unwrap());
        // step edges may fall on either side after rounding
        let near_edge = [20.0, 80.0, 130.0].iter().any(|e| (t - e).abs() < 1e-9);
        prop_assert!(near_edge || (a - b).abs() <= 1e-12 * b.max(1e-6), "{} vs {}", a, b);
    }

    #[test]
    fn sampler_batches_have_p_identities_k_each(seed in 0u64..1000, call in 0u64..1000, p in 2usize..6, k in 1usize..5) {
        let labels: Vec<usize> = (0..40).map(|i| i % 8 + if i % 5 == 0 { 8 } else { 0 }).collect();
        let cfg = SamplerConfig { p, k, seed };
        let batch = sample_batch(&labels, &cfg, call).unwrap();
        prop_assert_eq!(batch.len(), p * k);
        let mut ids: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        for chunk in ids.chunks(k) {
            prop_assert!(chunk.iter().all(|&l| l == chunk[0]));
        }
        ids.dedup();
        let mut uniq = ids.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), p);
        prop_assert_eq!(batch.clone(), sample_batch(&labels, &cfg, call).unwrap());
    }

    #[test]
    fn labels_round_trip(spec_idx in 0usize..14, form in 0u8..3, stage in 2usize..=4, dim in 1usize..5000, cat in any::<bool>()) {
        let spec = adfl_core::attention::AttentionSpec::ALL[spec_idx];
        let text = match form {
            0 => "baseline".to_string(),
            1 => format!("{spec}@attn{stage}"),
            _ => format!("AF{stage}-{}-{dim}-attn{stage}-{spec}", if cat { "cat" } else { "sum" }),
        };
        let parsed: VariantLabel = text.parse().unwrap();
        prop_assert_eq!(parsed.to_string(), text);
    }
}

#[test]
fn sampler_draws_identities_uniformly() {
    let labels: Vec<usize> = (0..60).map(|i| i % 12).collect();
    let cfg = SamplerConfig { p: 4, k: 2, seed: 17 };
    let mut counts = [0usize; 12];
    let calls = 3000;
    for call in 0..calls {
        let batch = sample_batch(&labels, &cfg, call).unwrap();
        for chunk in batch.chunks(2) {
            counts[labels[chunk[0]]] += 1;
        }
    }
    let expected = calls as f64 * 4.0 / 12.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 11 degrees of freedom; the 99.9th percentile is 31.3
    assert!(chi2 < 31.3, "chi² = {chi2}, counts {counts:?}");
}

/// `log Σ exp` and the cross-entropy in double-double arithmetic, using only
/// series evaluations (no calls into a maths library).
mod extended {
    #[derive(Clone, Copy, Debug)]
    pub struct Dd(pub f64, pub f64);

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd(s, (a - (s - bb)) + (b - bb))
    }

    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        Dd(p, a.mul_add(b, -p))
    }

    impl Dd {
        pub fn add(self, o: Dd) -> Dd {
            let s = two_sum(self.0, o.0);
            let t = s.1 + self.1 + o.1;
            two_sum(s.0, t)
        }
        pub fn mul(self, o: Dd) -> Dd {
            let p = two_prod(self.0, o.0);
            two_sum(p.0, p.1 + self.0 * o.1 + self.1 * o.0)
        }
        pub fn scale(self, k: f64) -> Dd {
            self.mul(Dd(k, 0.0))
        }
        pub fn neg(self) -> Dd {
            Dd(-self.0, -self.1)
        }
        pub fn div(self, o: Dd) -> Dd {
            let q1 = self.0 / o.0;
            let r = self.add(o.scale(q1).neg());
            let q2 = r.0 / o.0;
            let r = r.add(o.scale(q2).neg());
            let q3 = r.0 / o.0;
            two_sum(q1, q2).add(Dd(q3, 0.0))
        }
    }

    const LN2: Dd = Dd(std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17);

    /// exp(x) for x ≤ 0 by range reduction and a Taylor series.
    pub fn exp(x: Dd) -> Dd {
        let k = (x.0 / LN2.0).round();
        let r = x.add(LN2.scale(k).neg()).scale(1.0 / 1024.0);
        let mut term = Dd(1.0, 0.0);
        let mut sum = Dd(1.0, 0.0);
        for n in 1..30 {
            term = term.mul(r).scale(1.0 / n as f64);
            sum = sum.add(term);
        }
        for _ in 0..10 {
            sum = sum.mul(sum);
        }
        sum.scale(2f64.powi(k as i32))
    }

    /// ln(y) for y > 0 by Newton iteration on exp.
    pub fn ln(y: Dd) -> Dd {
        let mut x = Dd(y.0.ln(), 0.0);
        for _ in 0..3 {
            let e = exp(x.neg());
            x = x.add(y.mul(e).add(Dd(-1.0, 0.0)));
        }
        x
    }
}

proptest! {
    #[test]
    fn softmax_xent_matches_double_double(
        rows in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 5), 1..6),
        label_seed in any::<u64>(),
    ) {
        use extended::{exp, ln, Dd};
        let b = rows.len();
        let labels: Vec<usize> = (0..b).map(|i| ((label_seed >> (i * 3)) % 5) as usize).collect();
        let mut total = Dd(0.0, 0.0);
        for (row, &l) in rows.iter().zip(&labels) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = Dd(0.0, 0.0);
            for &v in row {
                s = s.add(exp(Dd(v, 0.0).add(Dd(-m, 0.0))));
            }
            total = total.add(ln(s)).add(Dd(m - row[l], 0.0));
        }
        let want = total.div(Dd(b as f64, 0.0)).0;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[b, 5], rows.concat()).unwrap());
        let l = tape.softmax_xent(x, &labels).unwrap();
        let got = tape.value(l).item();
        prop_assert!((got - want).abs() <= 1e-13 * (1.0 + want.abs()), "{} vs {}", got, want);
    }
}

#[test]
fn adam_matches_hand_trace() {
    let cfg = AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    let mut theta = [1.0];
    let mut s = Moments::new(1);
    adam_step(&cfg, &mut theta, &[0.5], &mut s, 0.01);
    // m = 0.05, v = 2.5e-4; bias-corrected m̂ = 0.5, v̂ = 0.25
    assert!((theta[0] - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
    let after_one = theta[0];
    adam_step(&cfg, &mut theta, &[-1.0], &mut s, 0.01);
    // m = 0.9·0.05 − 0.1 = −0.055, v = 0.999·2.5e-4 + 0.001 = 1.24975e-3
    let m_hat = -0.055 / (1.0 - 0.81);
    let v_hat: f64 = 1.249_75e-3 / (1.0 - 0.998_001);
    assert!((theta[0] - (after_one - 0.01 * m_hat / (v_hat.sqrt() + 1e-8))).abs() < 1e-15);
    assert_eq!(s.steps, 2);

    let wd = AdamConfig { weight_decay: 0.1, ..cfg };
    let mut t = [2.0];
    let mut s = Moments::new(1);
    adam_step(&wd, &mut t, &[0.3], &mut s, 0.01);
    // g = 0.3 + 0.1·2 = 0.5, so the first step has the same size as above
    assert!((t[0] - (2.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
}
