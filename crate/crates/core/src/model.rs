//! The full network: a four-stage convolutional backbone, an optional attention
//! module after one stage, a pooled embedding head and an optional
//! attention-feature skip branch with its own head.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{Attention, AttentionSpec, ConvBlock};
use crate::error::{Error, Result};
use crate::label::{AttnPosition, Fusion, VariantLabel};
use crate::nn::{BatchNorm, Conv2d, Linear};
use crate::ops::conv::ConvKind;
use crate::ops::{ConvGeometry, PoolMode};
use crate::params::ParamStore;
use crate::tape::{Ctx, Mode, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stage_widths: [usize; 4],
    /// (height, width) of input images.
    pub input_hw: (usize, usize),
    pub attn_position: AttnPosition,
    /// Ignored when `attn_position` is `None`.
    pub attn_spec: AttentionSpec,
    pub af_skip: bool,
    pub fusion: Fusion,
    /// Output width of the skip branch's convolution block.
    pub af_dim: usize,
    pub embed_dim: usize,
    pub num_identities: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_widths: [8, 16, 24, 32],
            input_hw: (96, 32),
            attn_position: AttnPosition::None,
            attn_spec: AttentionSpec::Arranged(
                crate::attention::Family::LongRange,
                crate::attention::ArrangementKind::Sum,
            ),
            af_skip: false,
            fusion: Fusion::Cat,
            af_dim: 32,
            embed_dim: 32,
            num_identities: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.stage_widths.contains(&0) {
            return bad("stage widths must be positive");
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return bad("input extents must be positive");
        }
        if self.embed_dim == 0 || self.num_identities == 0 {
            return bad("embed_dim and num_identities must be positive");
        }
        if self.af_skip {
            if self.attn_position == AttnPosition::None {
                return bad("the attention-feature skip needs an attention position");
            }
            if self.af_dim == 0 {
                return bad("af_dim must be positive");
            }
            if self.fusion == Fusion::Sum && self.af_dim != self.embed_dim {
                return Err(Error::Config(format!(
                    "sum fusion needs af_dim ({}) equal to embed_dim ({})",
                    self.af_dim, self.embed_dim
                )));
            }
        }
        Ok(())
    }

    /// This configuration with attention and skip settings taken from `label`.
    pub fn with_label(&self, label: &VariantLabel) -> Self {
        let mut cfg = self.clone();
        cfg.attn_position = label.position();
        if let Some(spec) = label.spec() {
            cfg.attn_spec = spec;
        }
        cfg.af_skip = false;
        if let VariantLabel::Skip { fusion, dim, .. } = *label {
            cfg.af_skip = true;
            cfg.fusion = fusion;
            cfg.af_dim = dim;
        }
        cfg
    }

    /// Label describing the attention and skip settings.
    pub fn label(&self) -> VariantLabel {
        match (self.attn_position, self.af_skip) {
            (AttnPosition::None, _) => VariantLabel::Baseline,
            (position, false) => VariantLabel::Attention { spec: self.attn_spec, position: Some(position) },
            (position, true) => {
                VariantLabel::Skip { fusion: self.fusion, dim: self.af_dim, position, spec: self.attn_spec }
            }
        }
    }

    /// Width of the feature entering the skip head's batch norm.
    pub fn fused_dim(&self) -> usize {
        match self.fusion {
            Fusion::Cat => self.embed_dim + self.af_dim,
            Fusion::Sum => self.embed_dim,
        }
    }

    /// Spatial extents after each stage.
    pub fn stage_extents(&self) -> [(usize, usize); 4] {
        let mut hw = self.input_hw;
        let mut out = [(0, 0); 4];
        for (i, o) in out.iter_mut().enumerate() {
            hw = Stage::entry_geometry(i).output_hw(hw.0, hw.1);
            *o = hw;
        }
        out
    }
}

/// Two `3×3 conv → BN → ReLU` layers; the first may downsample.
#[derive(Clone, Debug)]
pub struct Stage {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
}

impl Stage {
    /// Stages 1–3 halve the resolution on entry; stage 4 keeps it.
    fn entry_geometry(index: usize) -> ConvGeometry {
        let stride = if index < 3 { 2 } else { 1 };
        ConvGeometry { kind: ConvKind::ThreeByThreePad1, stride }
    }

    fn new(store: &mut ParamStore, index: usize, cin: usize, cout: usize) -> Result<Self> {
        let name = format!("stage{}", index + 1);
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, Self::entry_geometry(index), false)?,
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), cout)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, ConvGeometry::THREE, false)?,
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let y = self.conv2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }
}

/// Batch norm on a feature vector followed by a bias-free identity classifier.
#[derive(Clone, Debug)]
pub struct BnHead {
    pub bn: BatchNorm,
    pub classifier: Linear,
}

impl BnHead {
    fn new(store: &mut ParamStore, name: &str, dim: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            bn: BatchNorm::new(store, &format!("{name}.bn"), dim)?,
            classifier: Linear::new(store, &format!("{name}.classifier"), dim, classes, false)?,
        })
    }

    fn forward(&self, ctx: &mut Ctx, pre_bn: Var) -> Result<HeadOutputs> {
        let embedding = self.bn.forward(ctx, pre_bn)?;
        let logits = self.classifier.forward(ctx, embedding)?;
        Ok(HeadOutputs { pre_bn, embedding, logits })
    }
}

#[derive(Clone, Debug)]
pub struct SkipBranch {
    pub block: ConvBlock,
    pub head: BnHead,
}

/// Tape handles for one head.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// Features entering the batch norm; the triplet loss uses these.
    pub pre_bn: Var,
    /// Batch-normalised features.
    pub embedding: Var,
    pub logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub base: HeadOutputs,
    pub skip: Option<HeadOutputs>,
}

impl ForwardOutputs {
    /// The head whose embedding serves as the retrieval feature.
    pub fn feature_head(&self) -> HeadOutputs {
        self.skip.unwrap_or(self.base)
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadOutputs> {
        core::iter::once(self.base).chain(self.skip)
    }
}

/// Layer structure of a model; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub stages: Vec<Stage>,
    pub attention: Option<Attention>,
    pub bottleneck: Linear,
    pub head: BnHead,
    pub skip: Option<SkipBranch>,
}

impl Network {
    pub fn build(config: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let w = config.stage_widths;
        let mut stages = Vec::with_capacity(4);
        let mut cin = 3;
        for (i, &cout) in w.iter().enumerate() {
            stages.push(Stage::new(store, i, cin, cout)?);
            cin = cout;
        }
        let attention = match config.attn_position.stage() {
            Some(s) => Some(Attention::build(store, "attn", config.attn_spec, w[s - 1])?),
            None => None,
        };
        let bottleneck = Linear::new(store, "head.fc", w[3], config.embed_dim, true)?;
        let head = BnHead::new(store, "head", config.embed_dim, config.num_identities)?;
        let skip = match (config.af_skip, config.attn_position.stage()) {
            (true, Some(s)) => Some(SkipBranch {
                block: ConvBlock::new(store, "skip.block", w[s - 1], config.af_dim)?,
                head: BnHead::new(store, "skip", config.fused_dim(), config.num_identities)?,
            }),
            _ => None,
        };
        Ok(Self { config: config.clone(), stages, attention, bottleneck, head, skip })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<ForwardOutputs> {
        let (_, c, h, w) = ctx.value(x).dims4("model input")?;
        let (eh, ew) = self.config.input_hw;
        if (c, h, w) != (3, eh, ew) {
            return Err(Error::dim("model input", &[3, eh, ew], &[c, h, w]));
        }
        let at = self.config.attn_position.stage();
        let mut stream = x;
        let mut attended = None;
        for (i, stage) in self.stages.iter().enumerate() {
            stream = stage.forward(ctx, stream)?;
            if at == Some(i + 1) {
                if let Some(attn) = &self.attention {
                    stream = attn.forward(ctx, stream)?;
                    attended = Some(stream);
                }
            }
        }
        let pooled = ctx.tape.pool(stream, PoolMode::GlobalMax)?;
        let pre_bn = self.bottleneck.forward(ctx, pooled)?;
        let base = self.head.forward(ctx, pre_bn)?;
        let skip = match (&self.skip, attended) {
            (Some(branch), Some(a)) => {
                let s = branch.block.forward(ctx, a)?;
                let s = ctx.tape.pool(s, PoolMode::GlobalMax)?;
                let fused = match self.config.fusion {
                    Fusion::Cat => ctx.tape.concat(&[pre_bn, s], 1)?,
                    Fusion::Sum => ctx.tape.add(pre_bn, s)?,
                };
                Some(branch.head.forward(ctx, fused)?)
            }
            _ => None,
        };
        Ok(ForwardOutputs { base, skip })
    }
}

/// Head outputs as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadValues {
    pub pre_bn: Tensor,
    pub embedding: Tensor,
    pub logits: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outputs {
    pub base: HeadValues,
    pub skip: Option<HeadValues>,
}

impl Outputs {
    pub fn features(&self) -> &Tensor {
        &self.skip.as_ref().unwrap_or(&self.base).embedding
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: Network,
    pub store: ParamStore,
    pub seed: u64,
    mode: Mode,
}

/// Images per pass when extracting features for batch-independent variants.
const EXTRACT_CHUNK: usize = 64;

impl Model {
    /// Builds a model in train mode; initial parameters depend only on `(config, seed)`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let net = Network::build(config, &mut store)?;
        Ok(Self { net, store, seed, mode: Mode::Train })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Number of parameter scalars belonging to the attention module.
    pub fn attention_scalar_count(&self) -> usize {
        self.store.params().iter().filter(|p| p.name.starts_with("attn.")).map(|p| p.tensor.numel()).sum()
    }

    /// One forward pass in `mode`. Running statistics are not updated.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Outputs> {
        let mut ctx = Ctx::new(&self.store, mode);
        let x = ctx.input(batch.clone());
        let out = self.net.forward(&mut ctx, x)?;
        let head = |h: HeadOutputs| HeadValues {
            pre_bn: ctx.value(h.pre_bn).clone(),
            embedding: ctx.value(h.embedding).clone(),
            logits: ctx.value(h.logits).clone(),
        };
        Ok(Outputs { base: head(out.base), skip: out.skip.map(head) })
    }

    fn require_eval(&self) -> Result<()> {
        match self.mode {
            Mode::Eval => Ok(()),
            Mode::Train => Err(Error::Contract("feature extraction needs an eval-mode model".into())),
        }
    }

    /// Retrieval feature of one `[3, H, W]` image: the mean of the embeddings of
    /// the image and its horizontal mirror.
    pub fn extract_features(&self, image: &Tensor) -> Result<Tensor> {
        self.require_eval()?;
        let mut shape = alloc::vec![1];
        shape.extend_from_slice(image.shape());
        let x = image.reshape(&shape)?;
        let f = self.features_of(&x)?;
        Ok(f.select(0))
    }

    /// Whether eval-mode outputs depend on which other images share the batch.
    pub fn is_batch_dependent(&self) -> bool {
        self.net.attention.is_some() && self.config().attn_spec.is_batch_dependent()
    }

    /// Flip-averaged features of a `[N, 3, H, W]` stack, one row per image.
    ///
    /// Images are processed in chunks, except for batch attention where each
    /// image gets its own pass so results match [`extract_features`](Self::extract_features).
    pub fn extract_all(&self, images: &Tensor) -> Result<Tensor> {
        self.require_eval()?;
        let (n, c, h, w) = images.dims4("extract_all")?;
        let chunk = if self.is_batch_dependent() { 1 } else { EXTRACT_CHUNK };
        let per = c * h * w;
        let mut rows = Vec::new();
        let mut dim = 0;
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let part = Tensor::new(&[end - start, c, h, w], images.data()[start * per..end * per].to_vec())?;
            let f = self.features_of(&part)?;
            dim = f.shape()[1];
            rows.extend_from_slice(f.data());
        }
        Tensor::new(&[n, dim], rows)
    }

    /// Flip-averaged features of a whole batch in a single pass (batch attention
    /// then mixes the given images).
    pub fn extract_batched(&self, images: &Tensor) -> Result<Tensor> {
        self.require_eval()?;
        self.features_of(images)
    }

    fn features_of(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.forward(x, Mode::Eval)?;
        let b = self.forward(&x.flip_last(), Mode::Eval)?;
        let (fa, fb) = (a.features(), b.features());
        let data = fa.data().iter().zip(fb.data()).map(|(p, q)| (p + q) / 2.0).collect();
        Tensor::new(fa.shape(), data)
    }
}

/// Builds a model; see [`Model::build`].
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    Model::build(config, seed)
}
