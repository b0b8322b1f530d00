use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::augment::augment;
use super::sampler::{sample_batch, SamplerConfig};
use super::schedule::LrSchedule;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{ForwardOutputs, Model};
use crate::params::ParamStore;
use crate::tape::{Ctx, Mode, Var};
use crate::tensor::Tensor;

/// Parameters whose names start with this are held fixed during the freeze phase.
pub const FROZEN_PREFIX: &str = "stage";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of epochs to run; must not exceed the scaled schedule length.
    pub epochs: usize,
    /// Multiplies every epoch boundary of the learning-rate schedule and the freeze phase.
    pub schedule_scale: f64,
    /// Multiplies every learning rate of the schedule.
    pub lr_scale: f64,
    pub sampler: SamplerConfig,
    pub adam: AdamConfig,
    pub margin: f64,
    /// Zero padding before the random crop.
    pub pad: usize,
    /// Backbone freeze length at full scale, in epochs.
    pub freeze_epochs: f64,
    pub softmax_weight: f64,
    pub triplet_weight: f64,
    /// With the skip branch on, whether the base head keeps its own losses.
    pub base_head_loss: bool,
    /// Seed of the augmentation stream; the sampler has its own seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            schedule_scale: 1.0,
            lr_scale: 1.0,
            sampler: SamplerConfig::default(),
            adam: AdamConfig::default(),
            margin: 0.3,
            pad: 3,
            freeze_epochs: 5.0,
            softmax_weight: 1.0,
            triplet_weight: 1.0,
            base_head_loss: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The default recipe compressed by `scale`, running the whole schedule.
    pub fn scaled(scale: f64) -> Self {
        Self { epochs: math::round(150.0 * scale) as usize, schedule_scale: scale, ..Self::default() }
    }

    pub fn frozen_epochs(&self) -> usize {
        math::round(self.freeze_epochs * self.schedule_scale) as usize
    }
}

/// Training images (each `[3, H, W]`) with class indices.
#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's batches, summed over active heads.
    pub softmax_loss: f64,
    pub triplet_loss: f64,
    /// Fraction of augmented training samples the retrieval head classifies correctly.
    pub train_acc: f64,
}

struct StepResult {
    softmax: f64,
    triplet: f64,
    correct: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Name of the first parameter holding a non-finite value or gradient.
fn first_non_finite(store: &ParamStore) -> String {
    let params = store.params();
    params
        .iter()
        .find(|p| !p.tensor.is_finite())
        .or_else(|| params.iter().find(|p| p.tensor.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite()))))
        .map(|p| p.name.clone())
        .unwrap_or_else(|| String::from("<input>"))
}

fn head_losses(ctx: &mut Ctx, out: &ForwardOutputs, labels: &[usize], cfg: &TrainConfig) -> Result<(Var, f64, f64)> {
    let mut total = None;
    let (mut sm, mut tr) = (0.0, 0.0);
    let heads = out.heads().enumerate().filter(|(i, _)| *i > 0 || out.skip.is_none() || cfg.base_head_loss);
    for (_, head) in heads {
        let xent = ctx.tape.softmax_xent(head.logits, labels)?;
        let trip = ctx.tape.batch_hard_triplet(head.pre_bn, labels, cfg.margin)?;
        sm += ctx.value(xent).item();
        tr += ctx.value(trip).item();
        let a = ctx.tape.scale(xent, cfg.softmax_weight);
        let b = ctx.tape.scale(trip, cfg.triplet_weight);
        let both = ctx.tape.add(a, b)?;
        total = Some(match total {
            Some(t) => ctx.tape.add(t, both)?,
            None => both,
        });
    }
    Ok((total.expect("at least one head is active"), sm, tr))
}

fn step(model: &mut Model, batch: Tensor, labels: &[usize], cfg: &TrainConfig) -> Result<(StepResult, bool)> {
    let (rec, loss, sm, tr, correct) = {
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let x = ctx.input(batch);
        let out = model.net.forward(&mut ctx, x)?;
        let (loss, sm, tr) = head_losses(&mut ctx, &out, labels, cfg)?;
        let logits = ctx.value(out.feature_head().logits);
        let n = logits.shape()[1];
        let correct =
            labels.iter().enumerate().filter(|(s, &l)| argmax(&logits.data()[s * n..(s + 1) * n]) == l).count();
        (ctx.finish(), loss, sm, tr, correct)
    };
    model.store.zero_grad();
    let finite = rec.tape.value(loss).is_finite();
    if finite {
        rec.backward(loss, &mut model.store)?;
        rec.apply_updates(&mut model.store);
    }
    Ok((StepResult { softmax: sm, triplet: tr, correct }, finite))
}

/// Trains `model` in place and returns one log entry per epoch.
///
/// `on_epoch` sees each entry as soon as its epoch finishes. A non-finite loss
/// or parameter aborts with [`Error::Divergence`] naming the first offending parameter.
pub fn train(
    model: &mut Model,
    data: &TrainSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let schedule = LrSchedule::scaled(cfg.schedule_scale)?;
    if cfg.epochs as f64 > schedule.total_epochs() + 1.0 {
        return Err(Error::Config(format!(
            "{} epochs exceed the schedule length {}",
            cfg.epochs,
            schedule.total_epochs()
        )));
    }
    if data.images.len() != data.labels.len() || data.images.is_empty() {
        return Err(Error::Dataset("training set needs one label per image and at least one image".into()));
    }
    if let Some(bad) = data.labels.iter().find(|&&l| l >= model.config().num_identities) {
        return Err(Error::Dataset(format!("label {bad} exceeds the classifier width")));
    }
    model.set_mode(Mode::Train);
    let mut adam = Adam::new(cfg.adam, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_epoch = (data.images.len() / cfg.sampler.batch_size()).max(1);
    let frozen_until = cfg.frozen_epochs();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut call = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch as f64)? * cfg.lr_scale;
        let (mut sm, mut tr, mut correct, mut seen) = (0.0, 0.0, 0usize, 0usize);
        for _ in 0..per_epoch {
            let idx = sample_batch(&data.labels, &cfg.sampler, call)?;
            call += 1;
            let imgs = idx.iter().map(|&i| augment(&data.images[i], cfg.pad, &mut rng)).collect::<Result<Vec<_>>>()?;
            let batch = Tensor::stack(&imgs.iter().collect::<Vec<_>>())?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let (r, finite) = match step(model, batch, &labels, cfg) {
                Err(Error::NonFinite { .. }) => (StepResult { softmax: 0.0, triplet: 0.0, correct: 0 }, false),
                other => other?,
            };
            if !finite {
                return Err(Error::Divergence { epoch, parameter: first_non_finite(&model.store) });
            }
            adam.step(&mut model.store, lr, |p| epoch < frozen_until && p.name.starts_with(FROZEN_PREFIX));
            if model.store.params().iter().any(|p| !p.tensor.is_finite()) {
                return Err(Error::Divergence { epoch, parameter: first_non_finite(&model.store) });
            }
            sm += r.softmax;
            tr += r.triplet;
            correct += r.correct;
            seen += labels.len();
        }
        let log = EpochLog {
            epoch,
            lr,
            softmax_loss: sm / per_epoch as f64,
            triplet_loss: tr / per_epoch as f64,
            train_acc: correct as f64 / seen as f64,
        };
        on_epoch(&log);
        logs.push(log);
    }
    model.store.zero_grad();
    Ok(logs)
}
