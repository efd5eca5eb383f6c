//! Contrastive token re-weighting.
//!
//! For every label token the weight starts from the logit difference
//! between the image-conditioned and image-free passes, is clamped into
//! `[alpha, beta]`, smoothed with a shrinking-window mean, and then used to
//! form a per-sample weighted average of the token negative log-likelihoods.
//! The weights are computed from detached values, so they never carry
//! gradient back into the model.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::VisualPrefix;
use crate::ops;
use crate::tape::Graph;
use crate::tensor::Tensor;
use crate::Rng;

/// How the prefix is altered for the contrast pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContrastCondition {
    /// Remove the prefix entirely.
    #[default]
    FullDrop,
    /// Zero a random `ceil(ratio * prefix_len)` subset of prefix slots.
    PatchMask { ratio: f64 },
    /// Add i.i.d. `N(0, sigma²)` noise to every feature entry.
    GaussianPerturb { sigma: f64 },
}

impl ContrastCondition {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ContrastCondition::FullDrop => Ok(()),
            ContrastCondition::PatchMask { ratio } if (0.0..=1.0).contains(&ratio) => Ok(()),
            ContrastCondition::PatchMask { ratio } => Err(Error::Config(format!(
                "patch mask ratio {ratio} outside [0, 1]"
            ))),
            ContrastCondition::GaussianPerturb { sigma } if sigma > 0.0 && sigma.is_finite() => {
                Ok(())
            }
            ContrastCondition::GaussianPerturb { sigma } => Err(Error::Config(format!(
                "gaussian perturbation sigma {sigma} must be positive"
            ))),
        }
    }

    /// Short stable label, e.g. `patch_mask_0.7`.
    pub fn label(&self) -> alloc::string::String {
        match self {
            ContrastCondition::FullDrop => "full_drop".into(),
            ContrastCondition::PatchMask { ratio } => format!("patch_mask_{ratio}"),
            ContrastCondition::GaussianPerturb { sigma } => format!("gaussian_{sigma}"),
        }
    }
}

/// Which quantity the per-token difference is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    /// Raw pre-softmax logits at the label index.
    #[default]
    Logit,
    /// Log-probabilities at the label index.
    LogProb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalConfig {
    pub alpha: f64,
    /// Upper clamp bound; `+∞` (serialized as `null`) disables it.
    #[serde(with = "unbounded")]
    pub beta: f64,
    pub window: usize,
    pub condition: ContrastCondition,
    pub enabled: bool,
    pub delta: DeltaKind,
}

impl Default for CalConfig {
    fn default() -> Self {
        CalConfig {
            alpha: 1.0,
            beta: 5.0,
            window: 3,
            condition: ContrastCondition::FullDrop,
            enabled: true,
            delta: DeltaKind::Logit,
        }
    }
}

impl CalConfig {
    pub fn validate(&self) -> Result<()> {
        check_bounds(self.alpha, self.beta)?;
        check_window(self.window)?;
        self.condition.validate()
    }
}

fn check_bounds(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    // alpha == beta is the constant-weight limit and stays legal
    if beta.is_nan() || alpha > beta {
        return Err(Error::Config(format!(
            "need alpha <= beta, got [{alpha}, {beta}]"
        )));
    }
    Ok(())
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "window must be odd and >= 1, got {window}"
        )));
    }
    Ok(())
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Per-label-position weights and the values they were derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenWeights {
    pub delta: Vec<f64>,
    pub clamped: Vec<f64>,
    /// Zero on positions outside `trainable_mask`.
    pub pooled: Vec<f64>,
    pub trainable_mask: Vec<bool>,
}

impl TokenWeights {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Unit weights on every trainable position.
    pub fn uniform(trainable_mask: &[bool]) -> Self {
        let ones: Vec<f64> = trainable_mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        TokenWeights {
            delta: alloc::vec![0.0; ones.len()],
            clamped: ones.clone(),
            pooled: ones,
            trainable_mask: trainable_mask.to_vec(),
        }
    }

    pub fn mass(&self) -> f64 {
        ops::sum(&Tensor::vector(self.pooled.clone())).data()[0]
    }
}

fn check_pair(o_with: &Tensor, o_without: &Tensor, labels: &[usize]) -> Result<()> {
    let (rows, _) = o_with.dims2()?;
    if o_with.shape() != o_without.shape() {
        return Err(Error::Shape {
            op: "delta_logits",
            left: o_with.shape().to_vec(),
            right: o_without.shape().to_vec(),
        });
    }
    if labels.len() != rows {
        return Err(Error::Shape {
            op: "delta_logits",
            left: o_with.shape().to_vec(),
            right: alloc::vec![labels.len()],
        });
    }
    Ok(())
}

/// `o_with[j, labels[j]] − o_without[j, labels[j]]` for every row.
pub fn delta_logits(o_with: &Tensor, o_without: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_pair(o_with, o_without, labels)?;
    let a = ops::gather_cols(o_with, labels)?;
    let b = ops::gather_cols(o_without, labels)?;
    Ok(ops::sub(&a, &b)?.into_data())
}

/// Same difference taken over log-probabilities instead of logits.
pub fn delta_log_probs(o_with: &Tensor, o_without: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_pair(o_with, o_without, labels)?;
    delta_logits(
        &ops::log_softmax(o_with)?,
        &ops::log_softmax(o_without)?,
        labels,
    )
}

pub fn delta(
    kind: DeltaKind,
    o_with: &Tensor,
    o_without: &Tensor,
    labels: &[usize],
) -> Result<Vec<f64>> {
    match kind {
        DeltaKind::Logit => delta_logits(o_with, o_without, labels),
        DeltaKind::LogProb => delta_log_probs(o_with, o_without, labels),
    }
}

/// `min(beta, max(alpha, d))` elementwise.
pub fn clamp_weights(delta: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    check_bounds(alpha, beta)?;
    Ok(delta
        .iter()
        .map(|&d| ops::clamp_value(d, alpha, beta))
        .collect())
}

/// Shrinking-window mean over the whole sequence; `window == 1` is the
/// identity and a window wider than the sequence averages everything.
pub fn pool_weights(w: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window)?;
    ops::window_mean(w, window, &alloc::vec![true; w.len()])
}

/// Pooling restricted to trainable positions; others come back as 0.
pub fn pool_weights_masked(w: &[f64], window: usize, mask: &[bool]) -> Result<Vec<f64>> {
    check_window(window)?;
    ops::window_mean(w, window, mask)
}

/// Delta, clamp, then pool: the weights the loss uses for one sample.
pub fn token_weights(
    o_with: &Tensor,
    o_without: &Tensor,
    labels: &[usize],
    trainable_mask: &[bool],
    config: &CalConfig,
) -> Result<TokenWeights> {
    if trainable_mask.len() != labels.len() {
        return Err(Error::Contract(
            "trainable mask length differs from labels".into(),
        ));
    }
    let delta = delta(config.delta, o_with, o_without, labels)?;
    let clamped = clamp_weights(&delta, config.alpha, config.beta)?;
    let pooled = pool_weights_masked(&clamped, config.window, trainable_mask)?;
    Ok(TokenWeights {
        delta,
        clamped,
        pooled,
        trainable_mask: trainable_mask.to_vec(),
    })
}

/// `−Σ_j ŵ_j · log_softmax(o_with[j])[labels[j]]` with ŵ already normalized.
fn weighted_nll<G: Graph>(
    g: &mut G,
    o_with: &G::Var,
    labels: &[usize],
    normalized: &G::Var,
) -> Result<G::Var> {
    let lsm = g.log_softmax(o_with)?;
    let picked = g.gather_cols(&lsm, labels)?;
    let weighted = g.mul(&picked, normalized)?;
    let total = g.sum(&weighted);
    Ok(g.scale(&total, -1.0))
}

/// Normalizes a pooled weight vector by its sum using the graph kernels, so
/// the constant and on-graph routes produce the same bits.
fn normalize_const(pooled: &[f64]) -> Result<Tensor> {
    let w = Tensor::vector(pooled.to_vec());
    let mass = ops::sum(&w);
    if !(mass.data()[0] > 0.0) {
        return Err(Error::DegenerateSample);
    }
    ops::div_scalar(&w, &mass)
}

/// Re-weighted loss for one sample with the weights entering as constants.
pub fn cal_loss<G: Graph>(
    g: &mut G,
    o_with: &G::Var,
    labels: &[usize],
    weights: &TokenWeights,
) -> Result<G::Var> {
    if weights.len() != labels.len() {
        return Err(Error::Contract(
            "weights and labels differ in length".into(),
        ));
    }
    let masked: Vec<f64> = weights
        .pooled
        .iter()
        .zip(&weights.trainable_mask)
        .map(|(&w, &m)| if m { w } else { 0.0 })
        .collect();
    let normalized = g.constant(normalize_const(&masked)?);
    weighted_nll(g, o_with, labels, &normalized)
}

/// Mean negative log-likelihood over trainable positions.
pub fn mle_loss<G: Graph>(
    g: &mut G,
    o_with: &G::Var,
    labels: &[usize],
    trainable_mask: &[bool],
) -> Result<G::Var> {
    if !trainable_mask.iter().any(|&m| m) {
        return Err(Error::DegenerateSample);
    }
    cal_loss(g, o_with, labels, &TokenWeights::uniform(trainable_mask))
}

/// Result of [`cal_loss_on_graph`].
pub struct CalSample<V> {
    pub loss: V,
    pub weights: TokenWeights,
    /// The sample had zero weight mass and was trained with uniform weights.
    pub fell_back: bool,
}

/// Re-weighted loss with the whole weight computation built on `g`.
///
/// The image-conditioned logits reach the weight path only through
/// [`Graph::detach`]; `o_without` enters as a constant. Zero weight mass
/// (possible when `alpha == 0`) falls back to uniform weights.
pub fn cal_loss_on_graph<G: Graph>(
    g: &mut G,
    o_with: &G::Var,
    o_without: &Tensor,
    labels: &[usize],
    trainable_mask: &[bool],
    config: &CalConfig,
) -> Result<CalSample<G::Var>> {
    cal_loss_with_path(g, o_with, o_without, labels, trainable_mask, config, true)
}

/// As [`cal_loss_on_graph`], but `detach` can be switched off. Without it the
/// weights become differentiable functions of the model, which is only
/// useful as a contrast in tests.
#[doc(hidden)]
pub fn cal_loss_with_path<G: Graph>(
    g: &mut G,
    o_with: &G::Var,
    o_without: &Tensor,
    labels: &[usize],
    trainable_mask: &[bool],
    config: &CalConfig,
    stop_gradient: bool,
) -> Result<CalSample<G::Var>> {
    config.validate()?;
    check_pair(g.value(o_with), o_without, labels)?;
    if trainable_mask.len() != labels.len() {
        return Err(Error::Contract(
            "trainable mask length differs from labels".into(),
        ));
    }
    if !trainable_mask.iter().any(|&m| m) {
        return Err(Error::DegenerateSample);
    }
    let with = if stop_gradient {
        g.detach(o_with)
    } else {
        o_with.clone()
    };
    let without = g.constant(o_without.detached());
    let (with, without) = match config.delta {
        DeltaKind::Logit => (with, without),
        DeltaKind::LogProb => (g.log_softmax(&with)?, g.log_softmax(&without)?),
    };
    let picked_with = g.gather_cols(&with, labels)?;
    let picked_without = g.gather_cols(&without, labels)?;
    let delta = g.sub(&picked_with, &picked_without)?;
    let clamped = g.clamp(&delta, config.alpha, config.beta);
    let mut pooled = g.window_mean(&clamped, config.window, trainable_mask)?;
    let mut mass = g.sum(&pooled);
    let fell_back = !(g.value(&mass).data()[0] > 0.0);
    if fell_back {
        pooled = g.constant(Tensor::vector(TokenWeights::uniform(trainable_mask).pooled));
        mass = g.sum(&pooled);
    }
    let weights = TokenWeights {
        delta: g.value(&delta).data().to_vec(),
        clamped: g.value(&clamped).data().to_vec(),
        pooled: g.value(&pooled).data().to_vec(),
        trainable_mask: trainable_mask.to_vec(),
    };
    let normalized = g.div_scalar(&pooled, &mass)?;
    let loss = weighted_nll(g, o_with, labels, &normalized)?;
    Ok(CalSample {
        loss,
        weights,
        fell_back,
    })
}

/// Arithmetic mean of per-sample scalar losses, summed in order.
pub fn batch_mean<G: Graph>(g: &mut G, losses: &[G::Var]) -> Result<G::Var> {
    let first = losses
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let mut total = first.clone();
    for l in &losses[1..] {
        total = g.add(&total, l)?;
    }
    Ok(g.scale(&total, 1.0 / losses.len() as f64))
}

/// The prefix the contrast pass sees; `None` means no prefix at all.
pub fn apply_condition(
    prefix: &VisualPrefix,
    condition: &ContrastCondition,
    rng: &mut Rng,
) -> Option<VisualPrefix> {
    match *condition {
        ContrastCondition::FullDrop => None,
        ContrastCondition::PatchMask { ratio } => {
            let slots = prefix.len();
            let count = (math::ceil(ratio * slots as f64) as usize).min(slots);
            let mut out = prefix.clone();
            let dim = out.feature_dim();
            let data = out.features_mut().data_mut();
            for slot in index::sample(rng, slots, count).into_iter() {
                data[slot * dim..(slot + 1) * dim].fill(0.0);
            }
            Some(out)
        }
        ContrastCondition::GaussianPerturb { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            let mut out = prefix.clone();
            for v in out.features_mut().data_mut() {
                *v += normal.sample(rng);
            }
            Some(out)
        }
    }
}
