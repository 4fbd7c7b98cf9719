//! The built-in reference transformer: a small decoder-only causal language
//! model (or mean-pooled sequence classifier on the same trunk) with exact
//! introspection — per-layer attention capture, input-embedding gradients, and
//! full backpropagation for training. All math is f64.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{dot, log_sum_exp, softmax, softmax_prefix, Mat};
use super::tokenizer::TokenId;
use crate::error::{Error, Result};

const RMS_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CausalLm,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub vocab: usize,
    pub context: usize,
    /// Output classes; used by `Classifier` models.
    pub classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn causal_lm(
        layers: usize,
        heads: usize,
        embed_dim: usize,
        vocab: usize,
        context: usize,
    ) -> Self {
        ModelConfig {
            kind: ModelKind::CausalLm,
            layers,
            heads,
            embed_dim,
            vocab,
            context,
            classes: 0,
            seed: 0,
        }
    }

    pub fn classifier(
        layers: usize,
        heads: usize,
        embed_dim: usize,
        vocab: usize,
        context: usize,
        classes: usize,
    ) -> Self {
        ModelConfig {
            kind: ModelKind::Classifier,
            layers,
            heads,
            embed_dim,
            vocab,
            context,
            classes,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn head_rows(&self) -> usize {
        match self.kind {
            ModelKind::CausalLm => self.vocab,
            ModelKind::Classifier => self.classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.embed_dim == 0
            || self.vocab == 0
            || self.context == 0
        {
            return Err(Error::InvalidConfig(
                "all model dimensions must be >= 1".into(),
            ));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.kind == ModelKind::Classifier && self.classes == 0 {
            return Err(Error::InvalidConfig("classifier needs classes >= 1".into()));
        }
        Ok(())
    }
}

/// Architecture metadata and parameter accounting for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub kind: ModelKind,
    pub layer_count: usize,
    pub head_count: usize,
    pub embed_dim: usize,
    pub parameter_count: usize,
    pub trainable_parameter_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub fc1: Mat,
    pub fc2: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub layers: Vec<LayerParams>,
    pub head: Mat,
}

impl Params {
    fn zeros(config: &ModelConfig) -> Params {
        let d = config.embed_dim;
        Params {
            tok_emb: Mat::zeros(config.vocab, d),
            pos_emb: Mat::zeros(config.context, d),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    wq: Mat::zeros(d, d),
                    wk: Mat::zeros(d, d),
                    wv: Mat::zeros(d, d),
                    wo: Mat::zeros(d, d),
                    fc1: Mat::zeros(4 * d, d),
                    fc2: Mat::zeros(d, 4 * d),
                })
                .collect(),
            head: Mat::zeros(config.head_rows(), d),
        }
    }

    fn init(config: &ModelConfig) -> Params {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        // Residual-path projections use a depth-scaled std.
        let resid_std = INIT_STD / (2.0 * config.layers as f64).sqrt();
        Params {
            tok_emb: Mat::randn(config.vocab, d, INIT_STD, &mut rng),
            pos_emb: Mat::randn(config.context, d, INIT_STD, &mut rng),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    wq: Mat::randn(d, d, INIT_STD, &mut rng),
                    wk: Mat::randn(d, d, INIT_STD, &mut rng),
                    wv: Mat::randn(d, d, INIT_STD, &mut rng),
                    wo: Mat::randn(d, d, resid_std, &mut rng),
                    fc1: Mat::randn(4 * d, d, INIT_STD, &mut rng),
                    fc2: Mat::randn(d, 4 * d, resid_std, &mut rng),
                })
                .collect(),
            head: Mat::randn(config.head_rows(), d, INIT_STD, &mut rng),
        }
    }

    pub fn tensor_count(&self) -> usize {
        self.layers.len() * 6 + 3
    }

    pub fn visit(&self, mut f: impl FnMut(String, &Mat)) {
        f("tok_emb".into(), &self.tok_emb);
        f("pos_emb".into(), &self.pos_emb);
        for (i, layer) in self.layers.iter().enumerate() {
            f(format!("layers.{i}.wq"), &layer.wq);
            f(format!("layers.{i}.wk"), &layer.wk);
            f(format!("layers.{i}.wv"), &layer.wv);
            f(format!("layers.{i}.wo"), &layer.wo);
            f(format!("layers.{i}.fc1"), &layer.fc1);
            f(format!("layers.{i}.fc2"), &layer.fc2);
        }
        f("head".into(), &self.head);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut Mat)) {
        f("tok_emb".into(), &mut self.tok_emb);
        f("pos_emb".into(), &mut self.pos_emb);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(format!("layers.{i}.wq"), &mut layer.wq);
            f(format!("layers.{i}.wk"), &mut layer.wk);
            f(format!("layers.{i}.wv"), &mut layer.wv);
            f(format!("layers.{i}.wo"), &mut layer.wo);
            f(format!("layers.{i}.fc1"), &mut layer.fc1);
            f(format!("layers.{i}.fc2"), &mut layer.fc2);
        }
        f("head".into(), &mut self.head);
    }

    pub fn total_len(&self) -> usize {
        let mut n = 0;
        self.visit(|_, m| n += m.len());
        n
    }

    fn add_assign(&mut self, other: &Params) {
        self.tok_emb.add_assign(&other.tok_emb);
        self.pos_emb.add_assign(&other.pos_emb);
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.wq.add_assign(&b.wq);
            a.wk.add_assign(&b.wk);
            a.wv.add_assign(&b.wv);
            a.wo.add_assign(&b.wo);
            a.fc1.add_assign(&b.fc1);
            a.fc2.add_assign(&b.fc2);
        }
        self.head.add_assign(&other.head);
    }
}

// ---------------------------------------------------------------------------
// LoRA adapters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
}

impl LoraTarget {
    pub fn all() -> BTreeSet<LoraTarget> {
        [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O]
            .into_iter()
            .collect()
    }

    fn name(self) -> &'static str {
        match self {
            LoraTarget::Q => "q",
            LoraTarget::K => "k",
            LoraTarget::V => "v",
            LoraTarget::O => "o",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: BTreeSet<LoraTarget>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 16.0,
            targets: LoraTarget::all(),
        }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// One low-rank update `W + scale * b a` for a `[D, D]` projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `[rank, D]`
    pub a: Mat,
    /// `[D, rank]`
    pub b: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraState {
    pub config: LoraConfig,
    /// Per layer, per target adapter.
    pub layers: Vec<BTreeMap<LoraTarget, LoraAdapter>>,
}

impl LoraState {
    fn init(model_config: &ModelConfig, config: LoraConfig, seed: u64) -> LoraState {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = model_config.embed_dim;
        let layers = (0..model_config.layers)
            .map(|_| {
                config
                    .targets
                    .iter()
                    .map(|&t| {
                        (
                            t,
                            LoraAdapter {
                                a: Mat::randn(config.rank, d, INIT_STD, &mut rng),
                                b: Mat::zeros(d, config.rank),
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        LoraState { config, layers }
    }

    fn zeros_like(&self) -> LoraState {
        LoraState {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|(&t, ad)| {
                            (
                                t,
                                LoraAdapter {
                                    a: Mat::zeros(ad.a.rows, ad.a.cols),
                                    b: Mat::zeros(ad.b.rows, ad.b.cols),
                                },
                            )
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|layer| layer.values())
            .map(|ad| ad.a.len() + ad.b.len())
            .sum()
    }

    pub fn visit(&self, mut f: impl FnMut(String, &Mat)) {
        for (i, layer) in self.layers.iter().enumerate() {
            for (t, ad) in layer {
                f(format!("lora.{i}.{}.a", t.name()), &ad.a);
                f(format!("lora.{i}.{}.b", t.name()), &ad.b);
            }
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut Mat)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (t, ad) in layer {
                f(format!("lora.{i}.{}.a", t.name()), &mut ad.a);
                f(format!("lora.{i}.{}.b", t.name()), &mut ad.b);
            }
        }
    }

    fn add_assign(&mut self, other: &LoraState) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (t, ad) in a.iter_mut() {
                let o = &b[t];
                ad.a.add_assign(&o.a);
                ad.b.add_assign(&o.b);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub config: ModelConfig,
    pub params: Params,
    /// When present, base weights are frozen and only adapters train.
    pub lora: Option<LoraState>,
}

/// Which tensors a forward pass should retain in its trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capture {
    pub attentions: bool,
    pub embeddings: bool,
    pub logits: bool,
}

impl Capture {
    pub fn all() -> Capture {
        Capture {
            attentions: true,
            embeddings: true,
            logits: true,
        }
    }

    pub fn logits_only() -> Capture {
        Capture {
            logits: true,
            ..Default::default()
        }
    }
}

/// Tensors captured from one forward pass.
///
/// `attentions[layer][head]` is a `[T, T]` matrix whose row `i` is a
/// probability distribution over keys `0..=i` (future positions are exactly
/// zero). `embeddings` holds the `[T, embed_dim]` input token embeddings
/// before the positional term. `logits` is `[T, vocab]` for causal models and
/// `[1, classes]` for classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub token_ids: Vec<TokenId>,
    pub valid_len: usize,
    pub attentions: Option<Vec<Vec<Mat>>>,
    pub embeddings: Option<Mat>,
    pub logits: Option<Mat>,
}

/// Scalar objective over logits for attribution passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogitTarget {
    /// Log-probability of `token` in the next-token distribution at `position`.
    LogProb { position: usize, token: TokenId },
    /// Raw classifier logit for `class`.
    ClassLogit { class: usize },
}

impl LogitTarget {
    /// Returns the target value and its gradient w.r.t. the logits.
    fn value_and_dlogits(&self, logits: &Mat) -> Result<(f64, Mat)> {
        let mut d = Mat::zeros(logits.rows, logits.cols);
        match *self {
            LogitTarget::LogProb { position, token } => {
                if position >= logits.rows || (token as usize) >= logits.cols {
                    return Err(Error::ShapeMismatch("target outside logits".into()));
                }
                let row = logits.row(position);
                let value = row[token as usize] - log_sum_exp(row);
                let probs = softmax(row);
                for (j, out) in d.row_mut(position).iter_mut().enumerate() {
                    *out = -probs[j];
                }
                *d.row_mut(position).get_mut(token as usize).unwrap() += 1.0;
                Ok((value, d))
            }
            LogitTarget::ClassLogit { class } => {
                if logits.rows != 1 || class >= logits.cols {
                    return Err(Error::ShapeMismatch("target outside class logits".into()));
                }
                d.set(0, class, 1.0);
                Ok((logits.at(0, class), d))
            }
        }
    }
}

pub enum ForwardInput<'a> {
    Ids(&'a [TokenId]),
    /// Token embeddings `[T, embed_dim]`, bypassing the embedding lookup.
    Embeddings(&'a Mat),
}

struct NormCache {
    y: Mat,
    inv_rms: Vec<f64>,
}

struct LayerCache {
    h_in: Mat,
    norm1: NormCache,
    q: Mat,
    k: Mat,
    v: Mat,
    att: Vec<Mat>,
    ctx: Mat,
    h_mid: Mat,
    norm2: NormCache,
    pre_act: Mat,
    act: Mat,
    lora_z: BTreeMap<LoraTarget, Mat>,
}

pub(crate) struct ForwardCache {
    token_ids: Vec<TokenId>,
    tok_embs: Mat,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
    pooled: Option<Vec<f64>>,
    pub(crate) logits: Mat,
}

impl ForwardCache {
    pub(crate) fn seq_len(&self) -> usize {
        self.tok_embs.rows
    }
}

/// Gradients from one backward pass. `base` is absent when LoRA adapters are
/// active (frozen base), `lora` is absent otherwise.
pub(crate) struct Gradients {
    pub(crate) base: Option<Params>,
    pub(crate) lora: Option<LoraState>,
    pub(crate) input: Option<Mat>,
}

#[derive(Clone, Copy)]
pub(crate) struct BackwardOpts {
    pub(crate) param_grads: bool,
    pub(crate) input_grads: bool,
}

fn rmsnorm(x: &[f64]) -> (Vec<f64>, f64) {
    let ms = dot(x, x) / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    (x.iter().map(|v| v * inv).collect(), inv)
}

fn rmsnorm_rows(m: &Mat) -> NormCache {
    let mut y = Mat::zeros(m.rows, m.cols);
    let mut inv_rms = Vec::with_capacity(m.rows);
    for t in 0..m.rows {
        let (row, inv) = rmsnorm(m.row(t));
        y.row_mut(t).copy_from_slice(&row);
        inv_rms.push(inv);
    }
    NormCache { y, inv_rms }
}

/// d/dx of y = x * inv_rms(x): `ri*dy - ri^3/n * (dy.x) * x`.
fn rmsnorm_backward(dy: &[f64], x: &[f64], inv: f64, dx: &mut [f64]) {
    let n = x.len() as f64;
    let proj = dot(dy, x) * inv * inv * inv / n;
    for ((d, &g), &xv) in dx.iter_mut().zip(dy).zip(x) {
        *d += inv * g - proj * xv;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_K * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

impl ReferenceModel {
    /// Builds a model with deterministic seed-derived initialization.
    pub fn new(config: ModelConfig) -> Result<ReferenceModel> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(ReferenceModel {
            config,
            params,
            lora: None,
        })
    }

    /// Attaches freshly initialized LoRA adapters; base weights freeze.
    pub fn with_lora(mut self, lora_config: LoraConfig, seed: u64) -> Result<ReferenceModel> {
        if lora_config.rank == 0 || lora_config.targets.is_empty() {
            return Err(Error::InvalidConfig(
                "lora needs rank >= 1 and targets".into(),
            ));
        }
        self.lora = Some(LoraState::init(&self.config, lora_config, seed));
        Ok(self)
    }

    /// Folds trained adapters into the base weights and drops them.
    pub fn merge_lora(mut self) -> ReferenceModel {
        if let Some(lora) = self.lora.take() {
            let scale = lora.config.scale();
            for (layer, adapters) in self.params.layers.iter_mut().zip(&lora.layers) {
                for (target, ad) in adapters {
                    let w = match target {
                        LoraTarget::Q => &mut layer.wq,
                        LoraTarget::K => &mut layer.wk,
                        LoraTarget::V => &mut layer.wv,
                        LoraTarget::O => &mut layer.wo,
                    };
                    // W += scale * b a
                    for r in 0..w.rows {
                        for c in 0..w.cols {
                            let mut acc = 0.0;
                            for j in 0..ad.b.cols {
                                acc += ad.b.at(r, j) * ad.a.at(j, c);
                            }
                            *w.row_mut(r).get_mut(c).unwrap() += scale * acc;
                        }
                    }
                }
            }
        }
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_len()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        match &self.lora {
            Some(lora) => lora.trainable_parameter_count(),
            None => self.parameter_count(),
        }
    }

    pub fn handle(&self) -> ModelHandle {
        ModelHandle {
            kind: self.config.kind,
            layer_count: self.config.layers,
            head_count: self.config.heads,
            embed_dim: self.config.embed_dim,
            parameter_count: self.parameter_count(),
            trainable_parameter_count: self.trainable_parameter_count(),
        }
    }

    /// Token-embedding rows for `ids`.
    pub fn token_embeddings(&self, ids: &[TokenId]) -> Result<Mat> {
        self.check_len(ids.len())?;
        let d = self.config.embed_dim;
        let mut out = Mat::zeros(ids.len(), d);
        for (t, &id) in ids.iter().enumerate() {
            if (id as usize) >= self.config.vocab {
                return Err(Error::ShapeMismatch(format!("token id {id} outside vocab")));
            }
            out.row_mut(t)
                .copy_from_slice(self.params.tok_emb.row(id as usize));
        }
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::ShapeMismatch("empty sequence".into()));
        }
        if len > self.config.context {
            return Err(Error::ContextOverflow {
                len,
                context: self.config.context,
            });
        }
        Ok(())
    }

    fn adapter(&self, layer: usize, target: LoraTarget) -> Option<(&LoraAdapter, f64)> {
        self.lora.as_ref().and_then(|l| {
            l.layers[layer]
                .get(&target)
                .map(|ad| (ad, l.config.scale()))
        })
    }

    /// y = W x (+ scale * b (a x) when an adapter is attached). Returns the
    /// projection and the adapter intermediate `a x` if any.
    fn project(
        &self,
        w: &Mat,
        layer: usize,
        target: LoraTarget,
        x: &[f64],
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut y = w.matvec(x);
        if let Some((ad, scale)) = self.adapter(layer, target) {
            let z = ad.a.matvec(x);
            let bz = ad.b.matvec(&z);
            for (out, v) in y.iter_mut().zip(&bz) {
                *out += scale * v;
            }
            (y, Some(z))
        } else {
            (y, None)
        }
    }

    pub(crate) fn forward_cache(&self, input: ForwardInput<'_>) -> Result<ForwardCache> {
        let (tok_embs, token_ids) = match input {
            ForwardInput::Ids(ids) => (self.token_embeddings(ids)?, ids.to_vec()),
            ForwardInput::Embeddings(e) => {
                self.check_len(e.rows)?;
                if e.cols != self.config.embed_dim {
                    return Err(Error::ShapeMismatch("embedding width mismatch".into()));
                }
                (e.clone(), Vec::new())
            }
        };
        let t_len = tok_embs.rows;
        let d = self.config.embed_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut h = tok_embs.clone();
        for t in 0..t_len {
            let pos = self.params.pos_emb.row(t);
            for (hv, pv) in h.row_mut(t).iter_mut().zip(pos) {
                *hv += pv;
            }
        }

        let mut layers = Vec::with_capacity(self.config.layers);
        for (li, layer) in self.params.layers.iter().enumerate() {
            let h_in = h;
            let norm1 = rmsnorm_rows(&h_in);

            let mut q = Mat::zeros(t_len, d);
            let mut k = Mat::zeros(t_len, d);
            let mut v = Mat::zeros(t_len, d);
            let mut lora_z: BTreeMap<LoraTarget, Mat> = BTreeMap::new();
            let rank = self.lora.as_ref().map_or(0, |l| l.config.rank);
            for t in 0..t_len {
                let x = norm1.y.row(t);
                for (target, w, out) in [
                    (LoraTarget::Q, &layer.wq, &mut q),
                    (LoraTarget::K, &layer.wk, &mut k),
                    (LoraTarget::V, &layer.wv, &mut v),
                ] {
                    let (y, z) = self.project(w, li, target, x);
                    out.row_mut(t).copy_from_slice(&y);
                    if let Some(z) = z {
                        lora_z
                            .entry(target)
                            .or_insert_with(|| Mat::zeros(t_len, rank))
                            .row_mut(t)
                            .copy_from_slice(&z);
                    }
                }
            }

            let mut att: Vec<Mat> = (0..heads).map(|_| Mat::zeros(t_len, t_len)).collect();
            let mut ctx = Mat::zeros(t_len, d);
            for (hi, att_h) in att.iter_mut().enumerate() {
                let s = hi * dh;
                for t in 0..t_len {
                    let qrow = &q.row(t)[s..s + dh];
                    {
                        let row = att_h.row_mut(t);
                        for (j, slot) in row.iter_mut().enumerate().take(t + 1) {
                            *slot = dot(qrow, &k.row(j)[s..s + dh]) * scale;
                        }
                        softmax_prefix(row, t + 1);
                    }
                    let weights = att_h.row(t);
                    let ctx_row = ctx.row_mut(t);
                    for (j, &w) in weights.iter().enumerate().take(t + 1) {
                        if w == 0.0 {
                            continue;
                        }
                        for (c, &vv) in ctx_row[s..s + dh].iter_mut().zip(&v.row(j)[s..s + dh]) {
                            *c += w * vv;
                        }
                    }
                }
            }

            let mut h_mid = h_in.clone();
            for t in 0..t_len {
                let (y, z) = self.project(&layer.wo, li, LoraTarget::O, ctx.row(t));
                for (hv, ov) in h_mid.row_mut(t).iter_mut().zip(&y) {
                    *hv += ov;
                }
                if let Some(z) = z {
                    lora_z
                        .entry(LoraTarget::O)
                        .or_insert_with(|| Mat::zeros(t_len, rank))
                        .row_mut(t)
                        .copy_from_slice(&z);
                }
            }

            let norm2 = rmsnorm_rows(&h_mid);
            let mut pre_act = Mat::zeros(t_len, 4 * d);
            let mut act = Mat::zeros(t_len, 4 * d);
            let mut h_out = h_mid.clone();
            for t in 0..t_len {
                let u = layer.fc1.matvec(norm2.y.row(t));
                for (a, &uv) in act.row_mut(t).iter_mut().zip(&u) {
                    *a = gelu(uv);
                }
                pre_act.row_mut(t).copy_from_slice(&u);
                let m = layer.fc2.matvec(act.row(t));
                for (hv, mv) in h_out.row_mut(t).iter_mut().zip(&m) {
                    *hv += mv;
                }
            }

            layers.push(LayerCache {
                h_in,
                norm1,
                q,
                k,
                v,
                att,
                ctx,
                h_mid,
                norm2,
                pre_act,
                act,
                lora_z,
            });
            h = h_out;
        }

        let final_norm = rmsnorm_rows(&h);
        let (logits, pooled) = match self.config.kind {
            ModelKind::CausalLm => {
                let mut logits = Mat::zeros(t_len, self.config.vocab);
                for t in 0..t_len {
                    let row = self.params.head.matvec(final_norm.y.row(t));
                    logits.row_mut(t).copy_from_slice(&row);
                }
                (logits, None)
            }
            ModelKind::Classifier => {
                let mut pooled = vec![0.0; d];
                for t in 0..t_len {
                    for (p, &fv) in pooled.iter_mut().zip(final_norm.y.row(t)) {
                        *p += fv;
                    }
                }
                for p in pooled.iter_mut() {
                    *p /= t_len as f64;
                }
                let mut logits = Mat::zeros(1, self.config.classes);
                logits
                    .row_mut(0)
                    .copy_from_slice(&self.params.head.matvec(&pooled));
                (logits, Some(pooled))
            }
        };

        Ok(ForwardCache {
            token_ids,
            tok_embs,
            layers,
            final_norm,
            pooled,
            logits,
        })
    }

    /// Runs a forward pass over `ids`, capturing the requested tensors.
    /// Capture never perturbs the computation: logits are identical whether or
    /// not anything is retained.
    pub fn forward(&self, ids: &[TokenId], capture: Capture) -> Result<ForwardTrace> {
        let cache = self.forward_cache(ForwardInput::Ids(ids))?;
        Ok(Self::trace_from_cache(cache, capture))
    }

    fn trace_from_cache(cache: ForwardCache, capture: Capture) -> ForwardTrace {
        ForwardTrace {
            valid_len: cache.tok_embs.rows,
            token_ids: cache.token_ids,
            attentions: capture
                .attentions
                .then(|| cache.layers.into_iter().map(|l| l.att).collect()),
            embeddings: capture.embeddings.then_some(cache.tok_embs),
            logits: capture.logits.then_some(cache.logits),
        }
    }

    /// Value of `target` plus its gradient w.r.t. the input token embeddings.
    pub fn value_and_input_grad(
        &self,
        embeddings: &Mat,
        target: LogitTarget,
    ) -> Result<(f64, Mat)> {
        let cache = self.forward_cache(ForwardInput::Embeddings(embeddings))?;
        let (value, d_logits) = target.value_and_dlogits(&cache.logits)?;
        let grads = self.backward(
            &cache,
            &d_logits,
            BackwardOpts {
                param_grads: false,
                input_grads: true,
            },
        );
        Ok((value, grads.input.expect("input grads requested")))
    }

    /// Target value only (no gradient pass).
    pub fn value_at(&self, embeddings: &Mat, target: LogitTarget) -> Result<f64> {
        let cache = self.forward_cache(ForwardInput::Embeddings(embeddings))?;
        let (value, _) = target.value_and_dlogits(&cache.logits)?;
        Ok(value)
    }

    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &Mat,
        opts: BackwardOpts,
    ) -> Gradients {
        let t_len = cache.seq_len();
        let d = self.config.embed_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let fft = opts.param_grads && self.lora.is_none();

        let mut base = (opts.param_grads && fft).then(|| Params::zeros(&self.config));
        let mut lora_grads = (opts.param_grads && self.lora.is_some())
            .then(|| self.lora.as_ref().unwrap().zeros_like());

        // Head backward.
        let mut d_final_y = Mat::zeros(t_len, d);
        match self.config.kind {
            ModelKind::CausalLm => {
                for t in 0..t_len {
                    let dl = d_logits.row(t);
                    if let Some(g) = base.as_mut() {
                        g.head.add_outer(dl, cache.final_norm.y.row(t));
                    }
                    self.params.head.matvec_t_add(dl, d_final_y.row_mut(t));
                }
            }
            ModelKind::Classifier => {
                let pooled = cache
                    .pooled
                    .as_ref()
                    .expect("classifier cache has pooled state");
                let dl = d_logits.row(0);
                if let Some(g) = base.as_mut() {
                    g.head.add_outer(dl, pooled);
                }
                let mut d_pooled = vec![0.0; d];
                self.params.head.matvec_t_add(dl, &mut d_pooled);
                for t in 0..t_len {
                    for (out, &dv) in d_final_y.row_mut(t).iter_mut().zip(&d_pooled) {
                        *out += dv / t_len as f64;
                    }
                }
            }
        }

        // Final norm backward. The pre-norm stream was not stored; recover it
        // from the cache via x = y / inv_rms.
        let mut d_h = Mat::zeros(t_len, d);
        {
            let mut x_row = vec![0.0; d];
            for t in 0..t_len {
                let inv = cache.final_norm.inv_rms[t];
                for (x, &y) in x_row.iter_mut().zip(cache.final_norm.y.row(t)) {
                    *x = y / inv;
                }
                rmsnorm_backward(d_final_y.row(t), &x_row, inv, d_h.row_mut(t));
            }
        }

        for (li, layer_cache) in cache.layers.iter().enumerate().rev() {
            let layer = &self.params.layers[li];
            let d_out = d_h;

            // MLP block.
            let mut d_h_mid = d_out.clone();
            let mut d_norm2_y = Mat::zeros(t_len, d);
            for t in 0..t_len {
                let d_m = d_out.row(t);
                if let Some(g) = base.as_mut() {
                    g.layers[li].fc2.add_outer(d_m, layer_cache.act.row(t));
                }
                let mut d_act = vec![0.0; 4 * d];
                layer.fc2.matvec_t_add(d_m, &mut d_act);
                let mut d_u = d_act;
                for (g, &u) in d_u.iter_mut().zip(layer_cache.pre_act.row(t)) {
                    *g *= gelu_grad(u);
                }
                if let Some(g) = base.as_mut() {
                    g.layers[li].fc1.add_outer(&d_u, layer_cache.norm2.y.row(t));
                }
                layer.fc1.matvec_t_add(&d_u, d_norm2_y.row_mut(t));
            }
            for t in 0..t_len {
                rmsnorm_backward(
                    d_norm2_y.row(t),
                    layer_cache.h_mid.row(t),
                    layer_cache.norm2.inv_rms[t],
                    d_h_mid.row_mut(t),
                );
            }

            // Output projection.
            let mut d_ctx = Mat::zeros(t_len, d);
            for t in 0..t_len {
                let d_attn_out = d_h_mid.row(t);
                self.backward_projection(
                    li,
                    LoraTarget::O,
                    &layer.wo,
                    d_attn_out,
                    layer_cache.ctx.row(t),
                    layer_cache.lora_z.get(&LoraTarget::O).map(|z| z.row(t)),
                    base.as_mut().map(|g| &mut g.layers[li].wo),
                    lora_grads.as_mut(),
                    d_ctx.row_mut(t),
                );
            }

            // Attention heads.
            let mut d_q = Mat::zeros(t_len, d);
            let mut d_k = Mat::zeros(t_len, d);
            let mut d_v = Mat::zeros(t_len, d);
            for hi in 0..heads {
                let s = hi * dh;
                let att_h = &layer_cache.att[hi];
                for t in 0..t_len {
                    let d_ctx_row = &d_ctx.row(t)[s..s + dh];
                    let weights = att_h.row(t);
                    // d_att and value grads.
                    let mut d_att = vec![0.0; t + 1];
                    for j in 0..=t {
                        let v_row = &layer_cache.v.row(j)[s..s + dh];
                        d_att[j] = dot(d_ctx_row, v_row);
                        let w = weights[j];
                        if w != 0.0 {
                            for (dv, &dc) in d_v.row_mut(j)[s..s + dh].iter_mut().zip(d_ctx_row) {
                                *dv += w * dc;
                            }
                        }
                    }
                    // Softmax backward.
                    let dot_aw: f64 = (0..=t).map(|j| weights[j] * d_att[j]).sum();
                    for j in 0..=t {
                        let d_score = weights[j] * (d_att[j] - dot_aw) * scale;
                        if d_score == 0.0 {
                            continue;
                        }
                        let k_row = &layer_cache.k.row(j)[s..s + dh];
                        let q_row = &layer_cache.q.row(t)[s..s + dh];
                        for ((dq, &kv), (dk, &qv)) in d_q.row_mut(t)[s..s + dh]
                            .iter_mut()
                            .zip(k_row)
                            .zip(d_k.row_mut(j)[s..s + dh].iter_mut().zip(q_row))
                        {
                            *dq += d_score * kv;
                            *dk += d_score * qv;
                        }
                    }
                }
            }

            // Input projections.
            let mut d_norm1_y = Mat::zeros(t_len, d);
            for t in 0..t_len {
                for (target, w, dmat) in [
                    (LoraTarget::Q, &layer.wq, &d_q),
                    (LoraTarget::K, &layer.wk, &d_k),
                    (LoraTarget::V, &layer.wv, &d_v),
                ] {
                    let grad_w = base.as_mut().map(|g| {
                        let lp = &mut g.layers[li];
                        match target {
                            LoraTarget::Q => &mut lp.wq,
                            LoraTarget::K => &mut lp.wk,
                            LoraTarget::V => &mut lp.wv,
                            LoraTarget::O => unreachable!(),
                        }
                    });
                    self.backward_projection(
                        li,
                        target,
                        w,
                        dmat.row(t),
                        layer_cache.norm1.y.row(t),
                        layer_cache.lora_z.get(&target).map(|z| z.row(t)),
                        grad_w,
                        lora_grads.as_mut(),
                        d_norm1_y.row_mut(t),
                    );
                }
            }

            let mut d_h_in = d_h_mid;
            for t in 0..t_len {
                rmsnorm_backward(
                    d_norm1_y.row(t),
                    layer_cache.h_in.row(t),
                    layer_cache.norm1.inv_rms[t],
                    d_h_in.row_mut(t),
                );
            }
            d_h = d_h_in;
        }

        // Embedding-table and positional gradients.
        if let Some(g) = base.as_mut() {
            for (t, &id) in cache.token_ids.iter().enumerate() {
                for (gv, &dv) in g.tok_emb.row_mut(id as usize).iter_mut().zip(d_h.row(t)) {
                    *gv += dv;
                }
            }
            for t in 0..t_len {
                for (gv, &dv) in g.pos_emb.row_mut(t).iter_mut().zip(d_h.row(t)) {
                    *gv += dv;
                }
            }
        }

        Gradients {
            base,
            lora: lora_grads,
            input: opts.input_grads.then_some(d_h),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_projection(
        &self,
        layer: usize,
        target: LoraTarget,
        w: &Mat,
        d_y: &[f64],
        x: &[f64],
        z: Option<&[f64]>,
        grad_w: Option<&mut Mat>,
        lora_grads: Option<&mut LoraState>,
        d_x: &mut [f64],
    ) {
        if let Some(gw) = grad_w {
            gw.add_outer(d_y, x);
        }
        w.matvec_t_add(d_y, d_x);
        if let Some((ad, scale)) = self.adapter(layer, target) {
            let z = z.expect("adapter intermediate cached during forward");
            // d_z = scale * b^T d_y
            let mut d_z = vec![0.0; ad.a.rows];
            ad.b.matvec_t_add(d_y, &mut d_z);
            for g in d_z.iter_mut() {
                *g *= scale;
            }
            if let Some(lg) = lora_grads {
                let gad = lg.layers[layer].get_mut(&target).expect("adapter exists");
                // d_b += scale * d_y z^T ; d_a += d_z x^T
                let scaled_dy: Vec<f64> = d_y.iter().map(|v| v * scale).collect();
                gad.b.add_outer(&scaled_dy, z);
                gad.a.add_outer(&d_z, x);
            }
            ad.a.matvec_t_add(&d_z, d_x);
        }
    }
}

pub(crate) fn accumulate(total: &mut Gradients, part: &Gradients) {
    if let (Some(a), Some(b)) = (total.base.as_mut(), part.base.as_ref()) {
        a.add_assign(b);
    }
    if let (Some(a), Some(b)) = (total.lora.as_mut(), part.lora.as_ref()) {
        a.add_assign(b);
    }
}
