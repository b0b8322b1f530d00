//! Library forward passes against the explicit-loop references.

mod oracle;

use adfl_core::attention::{ArrangementKind, Attention, AttentionSpec, Family};
use adfl_core::label::VariantLabel;
use adfl_core::model::{Model, ModelConfig};
use adfl_core::params::ParamStore;
use adfl_core::{Ctx, Mode, Tensor};
use oracle::{max_abs_diff, random_tensor, randomize, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(spec: AttentionSpec, store_seed: u64, x: &Tensor, randomized: bool) -> (ParamStore, Tensor) {
    let mut store = ParamStore::new(store_seed);
    let attn = Attention::build(&mut store, "attn", spec, x.shape()[1]).unwrap();
    if randomized {
        randomize(&mut store, store_seed ^ 0xabc, 0.5);
    }
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let v = ctx.input(x.clone());
    let y = attn.forward(&mut ctx, v).unwrap();
    let out = ctx.value(y).clone();
    (store, out)
}

#[test]
fn every_variant_matches_its_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for spec in AttentionSpec::ALL {
        let label = spec.to_string();
        for trial in 0..6u64 {
            let b = if spec.is_batch_dependent() { 2 } else { rng.random_range(1..=2) };
            let shape = [b, rng.random_range(1..=8), rng.random_range(1..=3), rng.random_range(1..=3)];
            let x = random_tensor(&shape, trial * 31 + 7, 1.0);
            let (store, got) = run(spec, trial, &x, true);
            let want = oracle::attention(&store, "attn", &label, &Grid::from_tensor(&x));
            let err = max_abs_diff(got.data(), &want.v);
            assert!(err < 1e-10, "{label} {shape:?}: {err:e}");
        }
    }
}

fn long_range() -> impl Iterator<Item = AttentionSpec> {
    AttentionSpec::ALL.into_iter().filter(|s| s.family() == Family::LongRange)
}

fn is_sum(spec: AttentionSpec) -> bool {
    spec == AttentionSpec::Arranged(Family::LongRange, ArrangementKind::Sum)
}

#[test]
fn long_range_modules_start_as_identity() {
    for spec in long_range() {
        let x = random_tensor(&[2, 8, 3, 3], 5, 3.0);
        let (_, y) = run(spec, 9, &x, false);
        if is_sum(spec) {
            // both branches are exact identities and their outputs are added
            let doubled: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
            assert_eq!(y.data(), &doubled[..]);
        } else {
            assert_eq!(y.data(), x.data(), "{spec}");
        }
    }
}

fn label(s: &str) -> VariantLabel {
    s.parse().unwrap()
}

fn model_at(label_text: &str, seed: u64) -> Model {
    let base = ModelConfig { input_hw: (48, 16), num_identities: 5, ..ModelConfig::default() };
    let mut m = Model::build(&base.with_label(&label(label_text)), seed).unwrap();
    randomize(&mut m.store, seed ^ 0x55, 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in m.store.buffers_mut() {
        let var = b.name.ends_with("running_var");
        b.tensor
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = if var { rng.random_range(0.5..2.0) } else { rng.random_range(-0.3..0.3) });
    }
    for p in m.store.params_mut().iter_mut().filter(|p| p.name.contains(".bn") && p.name.ends_with(".weight")) {
        p.tensor.data_mut().iter_mut().for_each(|v| *v += 1.0);
    }
    m
}

#[test]
fn composed_model_matches_reference() {
    for (i, text) in
        ["baseline", "1sum@attn3", "AF3-cat-8-attn3-1sum", "AF2-sum-32-attn2-2multiply", "AF4-cat-16-attn4-1c"]
            .into_iter()
            .enumerate()
    {
        let m = model_at(text, i as u64 + 1);
        let x = random_tensor(&[3, 3, 48, 16], 100 + i as u64, 1.0);
        let spec = label(text).spec().map(|s| s.to_string());
        for mode in [Mode::Train, Mode::Eval] {
            let got = m.forward(&x, mode).unwrap();
            let want =
                oracle::network(m.config(), &m.store, &Grid::from_tensor(&x), mode == Mode::Train, spec.as_deref());
            let pairs = [(Some(&got.base), Some(&want.base)), (got.skip.as_ref(), want.skip.as_ref())];
            for (g, w) in pairs {
                assert_eq!(g.is_some(), w.is_some(), "{text}");
                if let (Some(g), Some(w)) = (g, w) {
                    for (a, b) in [(&g.pre_bn, &w.0), (&g.embedding, &w.1), (&g.logits, &w.2)] {
                        let err = max_abs_diff(a.data(), b);
                        assert!(err < 1e-8, "{text} {mode:?}: {err:e}");
                    }
                }
            }
        }
    }
}

#[test]
fn zero_scale_attention_without_skip_equals_baseline() {
    for spec in long_range().filter(|s| !is_sum(*s)) {
        let cfg = ModelConfig { input_hw: (48, 16), num_identities: 4, ..ModelConfig::default() };
        let base = Model::build(&cfg, 3).unwrap();
        let with = Model::build(&cfg.with_label(&VariantLabel::Attention { spec, position: None }), 3).unwrap();
        let x = random_tensor(&[2, 3, 48, 16], 8, 1.0);
        for mode in [Mode::Train, Mode::Eval] {
            let a = base.forward(&x, mode).unwrap();
            let b = with.forward(&x, mode).unwrap();
            assert_eq!(a.base.logits.data(), b.base.logits.data(), "{spec}");
        }
    }
}
