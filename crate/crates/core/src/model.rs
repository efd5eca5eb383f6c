//! Decoder-only transformer with an optional visual prefix.
//!
//! Pre-norm blocks, learned absolute positions, and a linear projector that
//! maps `prefix_len` feature vectors into the embedding space ahead of the
//! text tokens. Row `j` of the returned logits predicts token `j + 1`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cal::{apply_condition, ContrastCondition};
use crate::error::{Error, Result};
use crate::math;
use crate::tape::{Eager, Graph};
use crate::tensor::Tensor;
use crate::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// How the image-free pass removes the prefix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageRemovalMode {
    /// Prefix rows are omitted; text positions start at 0.
    #[default]
    DropPrefix,
    /// Prefix slots stay in place (zero features) but text positions cannot
    /// attend to them.
    AttentionMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub prefix_len: usize,
    pub feature_dim: usize,
    pub image_removal_mode: ImageRemovalMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::data::Vocab::standard().len(),
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 40,
            prefix_len: 8,
            feature_dim: crate::data::MIN_FEATURE_DIM,
            image_removal_mode: ImageRemovalMode::DropPrefix,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.prefix_len >= self.max_seq_len {
            return Err(Error::Config(format!(
                "prefix_len {} leaves no room for text in max_seq_len {}",
                self.prefix_len, self.max_seq_len
            )));
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Longest token sequence the model accepts alongside a prefix.
    pub fn max_text_len(&self) -> usize {
        self.max_seq_len - self.prefix_len
    }
}

/// Continuous image features, one row per prefix slot.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualPrefix {
    features: Tensor,
}

impl VisualPrefix {
    pub fn new(features: Tensor) -> Result<Self> {
        features.dims2()?;
        if !features.is_finite() {
            return Err(Error::NonFinite("visual prefix".into()));
        }
        Ok(VisualPrefix { features })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Tensor {
        &mut self.features
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

const LAYER_FIELDS: [&str; 16] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
];

impl<T> LayerWeights<T> {
    fn fields(&self) -> [&T; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = T>) -> Option<Self> {
        Some(LayerWeights {
            ln1_gain: it.next()?,
            ln1_bias: it.next()?,
            wq: it.next()?,
            bq: it.next()?,
            wk: it.next()?,
            bk: it.next()?,
            wv: it.next()?,
            bv: it.next()?,
            wo: it.next()?,
            bo: it.next()?,
            ln2_gain: it.next()?,
            ln2_bias: it.next()?,
            w1: it.next()?,
            b1: it.next()?,
            w2: it.next()?,
            b2: it.next()?,
        })
    }
}

/// All weights of the model, generic so the same layout can hold tensors or
/// graph handles bound for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub tok_emb: T,
    pub pos_emb: T,
    pub projector: T,
    pub layers: Vec<LayerWeights<T>>,
    pub final_gain: T,
    pub final_bias: T,
    pub head: T,
}

pub type ModelParams = Weights<Tensor>;

/// Index of the projector in [`Weights::names`] order.
pub const PROJECTOR_INDEX: usize = 2;

impl<T> Weights<T> {
    /// Canonical parameter names, in the order used for indices,
    /// optimizer state and checkpoints.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["tok_emb".into(), "pos_emb".into(), "projector".into()];
        for i in 0..self.layers.len() {
            out.extend(LAYER_FIELDS.iter().map(|f| format!("layers.{i}.{f}")));
        }
        out.extend([
            "final_norm.gain".into(),
            "final_norm.bias".into(),
            "head".into(),
        ]);
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        [&self.tok_emb, &self.pos_emb, &self.projector]
            .into_iter()
            .chain(self.layers.iter().flat_map(|l| l.fields()))
            .chain([&self.final_gain, &self.final_bias, &self.head])
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        [&mut self.tok_emb, &mut self.pos_emb, &mut self.projector]
            .into_iter()
            .chain(self.layers.iter_mut().flat_map(|l| l.fields_mut()))
            .chain([&mut self.final_gain, &mut self.final_bias, &mut self.head])
    }

    pub fn len(&self) -> usize {
        3 + 16 * self.layers.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rebuilds the layout from items in canonical order.
    pub fn from_ordered(n_layers: usize, items: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = items.into_iter();
        let tok_emb = it.next()?;
        let pos_emb = it.next()?;
        let projector = it.next()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(LayerWeights::from_iter(&mut it)?);
        }
        let w = Weights {
            tok_emb,
            pos_emb,
            projector,
            layers,
            final_gain: it.next()?,
            final_bias: it.next()?,
            head: it.next()?,
        };
        it.next().is_none().then_some(w)
    }

    pub fn map<U>(&self, mut f: impl FnMut(usize, &T) -> U) -> Weights<U> {
        let n_layers = self.layers.len();
        let mapped: Vec<U> = self.iter().enumerate().map(|(i, t)| f(i, t)).collect();
        Weights::from_ordered(n_layers, mapped).expect("layout preserved by map")
    }
}

impl ModelParams {
    /// Expected shape of every parameter, in canonical order.
    pub fn shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let d = config.d_model;
        let f = config.d_ff();
        let mut out = vec![
            vec![config.vocab_size, d],
            vec![config.max_seq_len, d],
            vec![config.feature_dim, d],
        ];
        for _ in 0..config.n_layers {
            out.extend([
                vec![d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, f],
                vec![f],
                vec![f, d],
                vec![d],
            ]);
        }
        out.extend([vec![d], vec![d], vec![d, config.vocab_size]]);
        out
    }

    /// Deterministic initialization: N(0, 0.02²) for matrices and
    /// embeddings, ones for layer-norm gains, zeros for biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng_from_seed(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let shapes = Self::shapes(config);
        let skeleton = Weights::from_ordered(config.n_layers, shapes.iter().cloned())
            .expect("shape list matches layout");
        let names = skeleton.names();
        let tensors = names.iter().zip(&shapes).map(|(name, shape)| {
            if name.ends_with(".gain") {
                Tensor::full(shape, 1.0)
            } else if shape.len() == 1 {
                Tensor::zeros(shape)
            } else {
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::from_parts(shape.clone(), data)
            }
        });
        Ok(
            Weights::from_ordered(config.n_layers, tensors.collect::<Vec<_>>())
                .expect("layout preserved"),
        )
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.n_layers {
            return Err(Error::Config(format!(
                "params have {} layers, config wants {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        for ((name, t), shape) in self
            .names()
            .iter()
            .zip(self.iter())
            .zip(Self::shapes(config))
        {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "{name}: shape {:?} != expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(name.clone()));
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor on `g` as parameter `i`.
    pub fn bind<G: Graph>(&self, g: &mut G) -> Weights<G::Var> {
        self.map(|i, t| g.param(i, t))
    }
}

/// Checks lengths and ids and returns the attention layout.
fn layout(
    config: &ModelConfig,
    tokens: &[usize],
    prefix: Option<&VisualPrefix>,
) -> Result<(usize, bool)> {
    if tokens.is_empty() {
        return Err(Error::Contract("forward needs at least one token".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::Vocab {
            id: bad,
            vocab: config.vocab_size,
        });
    }
    if let Some(p) = prefix {
        if p.len() != config.prefix_len || p.feature_dim() != config.feature_dim {
            return Err(Error::Shape {
                op: "visual prefix",
                left: p.features().shape().to_vec(),
                right: vec![config.prefix_len, config.feature_dim],
            });
        }
    }
    // (number of prefix rows in the sequence, whether text is blocked from them)
    let (rows, blocked) = match (prefix, config.image_removal_mode) {
        (Some(_), _) => (config.prefix_len, false),
        (None, ImageRemovalMode::DropPrefix) => (0, false),
        (None, ImageRemovalMode::AttentionMask) => (config.prefix_len, true),
    };
    let total = rows + tokens.len();
    if total > config.max_seq_len {
        return Err(Error::Length {
            len: total,
            max: config.max_seq_len,
        });
    }
    Ok((rows, blocked))
}

fn attention_mask(total: usize, prefix_rows: usize, blocked: bool) -> Vec<bool> {
    let mut allowed = vec![false; total * total];
    for q in 0..total {
        for k in 0..=q {
            let text_to_prefix = q >= prefix_rows && k < prefix_rows;
            allowed[q * total + k] = !(blocked && text_to_prefix);
        }
    }
    allowed
}

/// Forward pass on `g` with weights already bound to it.
pub fn forward_bound<G: Graph>(
    g: &mut G,
    config: &ModelConfig,
    w: &Weights<G::Var>,
    tokens: &[usize],
    prefix: Option<&VisualPrefix>,
) -> Result<G::Var> {
    let (prefix_rows, blocked) = layout(config, tokens, prefix)?;
    let total = prefix_rows + tokens.len();
    let d = config.d_model;

    let text = g.embedding(&w.tok_emb, tokens)?;
    let seq = if prefix_rows > 0 {
        let features = match prefix {
            Some(p) => p.features().detached(),
            None => Tensor::zeros(&[config.prefix_len, config.feature_dim]),
        };
        let features = g.constant(features);
        let visual = g.matmul(&features, &w.projector)?;
        g.concat_rows(&[visual, text])?
    } else {
        text
    };
    let positions: Vec<usize> = (0..total).collect();
    let pos = g.embedding(&w.pos_emb, &positions)?;
    let mut h = g.add(&seq, &pos)?;

    let allowed = attention_mask(total, prefix_rows, blocked);
    let dh = config.head_dim();
    let inv_sqrt_dh = 1.0 / math::sqrt(dh as f64);
    for layer in &w.layers {
        let a = g.layer_norm(&h, &layer.ln1_gain, &layer.ln1_bias, LAYER_NORM_EPS)?;
        let q = affine(g, &a, &layer.wq, &layer.bq)?;
        let k = affine(g, &a, &layer.wk, &layer.bk)?;
        let v = affine(g, &a, &layer.wv, &layer.bv)?;
        let mut heads = Vec::with_capacity(config.n_heads);
        for head in 0..config.n_heads {
            let qh = g.slice_cols(&q, head * dh, dh)?;
            let kh = g.slice_cols(&k, head * dh, dh)?;
            let vh = g.slice_cols(&v, head * dh, dh)?;
            let kt = g.transpose(&kh)?;
            let scores = g.matmul(&qh, &kt)?;
            let scores = g.scale(&scores, inv_sqrt_dh);
            let probs = g.masked_softmax(&scores, &allowed)?;
            heads.push(g.matmul(&probs, &vh)?);
        }
        let joined = if heads.len() == 1 {
            heads.pop().expect("one head")
        } else {
            g.concat_cols(&heads)?
        };
        let attn = affine(g, &joined, &layer.wo, &layer.bo)?;
        h = g.add(&h, &attn)?;

        let a = g.layer_norm(&h, &layer.ln2_gain, &layer.ln2_bias, LAYER_NORM_EPS)?;
        let up = affine(g, &a, &layer.w1, &layer.b1)?;
        let act = g.gelu(&up);
        let down = affine(g, &act, &layer.w2, &layer.b2)?;
        h = g.add(&h, &down)?;
    }
    debug_assert_eq!(g.value(&h).shape(), [total, d]);
    let text_rows = if prefix_rows > 0 {
        g.slice_rows(&h, prefix_rows, tokens.len())?
    } else {
        h
    };
    let normed = g.layer_norm(&text_rows, &w.final_gain, &w.final_bias, LAYER_NORM_EPS)?;
    g.matmul(&normed, &w.head)
}

fn affine<G: Graph>(g: &mut G, x: &G::Var, w: &G::Var, b: &G::Var) -> Result<G::Var> {
    let xw = g.matmul(x, w)?;
    g.add(&xw, b)
}

/// Logits `[tokens.len() × vocab_size]` for one sequence.
pub fn forward<G: Graph>(
    g: &mut G,
    config: &ModelConfig,
    params: &ModelParams,
    tokens: &[usize],
    prefix: Option<&VisualPrefix>,
) -> Result<G::Var> {
    let w = params.bind(g);
    forward_bound(g, config, &w, tokens, prefix)
}

/// Tape-free logits; nothing is recorded anywhere.
pub fn forward_untaped(
    config: &ModelConfig,
    params: &ModelParams,
    tokens: &[usize],
    prefix: Option<&VisualPrefix>,
) -> Result<Tensor> {
    forward(&mut Eager, config, params, tokens, prefix)
}

/// Image-conditioned logits on `g` and image-free logits computed off-tape.
///
/// The second pass sees the prefix transformed by `condition`; it shares
/// no graph linkage with the first.
#[allow(clippy::too_many_arguments)]
pub fn forward_contrast<G: Graph>(
    g: &mut G,
    config: &ModelConfig,
    params: &ModelParams,
    bound: &Weights<G::Var>,
    tokens: &[usize],
    prefix: &VisualPrefix,
    condition: &ContrastCondition,
    rng: &mut Rng,
) -> Result<(G::Var, Tensor)> {
    let with = forward_bound(g, config, bound, tokens, Some(prefix))?;
    let contrast = apply_condition(prefix, condition, rng);
    let without = forward_untaped(config, params, tokens, contrast.as_ref())?;
    Ok((with, without))
}
