//! Training loop, evaluation and per-token weight reports.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::cal::{self, apply_condition, CalConfig};
use crate::data::{build_batches, build_examples, swap_corrupt, Corpus, Example, Split, TokenKind};
use crate::error::{Error, Result};
use crate::model::{self, forward_contrast, ModelConfig, ModelParams, PROJECTOR_INDEX};
use crate::stats;
use crate::tape::{Eager, Tape};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub corpus_size: usize,
    /// Probability of one contradictory attribute word per training caption.
    pub contradiction_rate: f64,
    /// Fraction of training samples whose captions are exchanged in pairs.
    pub swap_ratio: f64,
    pub eval_size: usize,
    /// Contradiction probability for the (never swapped) eval corpus.
    pub eval_contradiction_rate: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus_size: 4000,
            contradiction_rate: 0.0,
            swap_ratio: 0.0,
            eval_size: 500,
            eval_contradiction_rate: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-4,
            steps: 2000,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Two-stage schedule: a projector-only warmup followed by full training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageFlags {
    pub cal_in_pt: bool,
    pub cal_in_it: bool,
    /// Share of `steps` spent in the projector-only stage.
    pub pt_fraction: f64,
}

impl Default for StageFlags {
    fn default() -> Self {
        StageFlags {
            cal_in_pt: true,
            cal_in_it: true,
            pt_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub cal: CalConfig,
    pub data: DataConfig,
    pub optim: OptimConfig,
    pub stage_flags: StageFlags,
    /// Evaluate every this many steps; 0 evaluates only after the last step.
    pub eval_every: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            cal: CalConfig::default(),
            data: DataConfig::default(),
            optim: OptimConfig::default(),
            stage_flags: StageFlags::default(),
            eval_every: 500,
            output_dir: "runs/default".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.cal.validate()?;
        if self.optim.steps == 0 {
            return Err(Error::Config("optim.steps must be positive".into()));
        }
        if self.optim.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be positive".into()));
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return Err(Error::Config("optim.lr must be positive".into()));
        }
        if self.data.corpus_size == 0 {
            return Err(Error::Config("data.corpus_size must be positive".into()));
        }
        for (name, v) in [
            ("data.contradiction_rate", self.data.contradiction_rate),
            ("data.swap_ratio", self.data.swap_ratio),
            (
                "data.eval_contradiction_rate",
                self.data.eval_contradiction_rate,
            ),
            ("stage_flags.pt_fraction", self.stage_flags.pt_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn pt_steps(&self) -> usize {
        (self.stage_flags.pt_fraction * self.optim.steps as f64) as usize
    }

    /// Whether the re-weighted objective is used at `step`.
    pub fn cal_active(&self, step: usize) -> bool {
        self.cal.enabled
            && match Stage::at(self, step) {
                Stage::Pretrain => self.stage_flags.cal_in_pt,
                Stage::InstructionTune => self.stage_flags.cal_in_it,
            }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Only the visual projector is updated.
    Pretrain,
    /// Every parameter is updated.
    InstructionTune,
}

impl Stage {
    pub fn at(config: &ExperimentConfig, step: usize) -> Stage {
        if step < config.pt_steps() {
            Stage::Pretrain
        } else {
            Stage::InstructionTune
        }
    }
}

/// Independent seed streams derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const TRAIN_DATA: u64 = 2;
    pub const EVAL_DATA: u64 = 3;
    pub const SWAP: u64 = 4;
    pub const BATCHES: u64 = 5;
    pub const CONTRAST: u64 = 6;
    pub const EVAL_CONTRAST: u64 = 7;
}

/// splitmix64 of `seed` mixed with a stream tag.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training corpus after swap corruption, and the clean eval corpus.
pub fn build_corpora(config: &ExperimentConfig) -> Result<(Corpus, Corpus)> {
    let seed = config.optim.seed;
    let clean = Corpus::generate(
        config.data.corpus_size,
        config.data.contradiction_rate,
        Split::Train,
        derive_seed(seed, streams::TRAIN_DATA),
    )?;
    let mut swap_rng = crate::rng_from_seed(derive_seed(seed, streams::SWAP));
    let train = swap_corrupt(&clean, config.data.swap_ratio, &mut swap_rng)?;
    let eval = Corpus::generate(
        config.data.eval_size,
        config.data.eval_contradiction_rate,
        Split::Eval,
        derive_seed(seed, streams::EVAL_DATA),
    )?;
    Ok((train, eval))
}

/// Per-kind mean delta with its sample count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindDelta {
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// Mean training loss over the steps since the previous record.
    pub train_loss: f64,
    pub acc_overall: Option<f64>,
    pub acc_correlated: Option<f64>,
    /// At contradictory positions: did the model predict the scene's true
    /// attribute instead of the corrupted label.
    pub acc_contradictory_true: Option<f64>,
    pub delta_correlated: KindDelta,
    pub delta_irrelevant: KindDelta,
    pub delta_contradictory: KindDelta,
    /// AUC of delta separating correlated from contradictory tokens.
    pub separation_auc: Option<f64>,
    pub fallbacks: u64,
    /// Filled in by drivers that measure time; never part of metric files.
    pub wall_clock_s: Option<f64>,
}

/// Raw evaluation output before it is condensed into a record.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub correct_correlated: usize,
    pub total_correlated: usize,
    pub true_at_contradictory: usize,
    pub total_contradictory: usize,
    pub deltas: BTreeMap<TokenKind, Vec<f64>>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Evaluation {
    pub fn delta_stats(&self, kind: TokenKind) -> KindDelta {
        let v = self.deltas.get(&kind).map(Vec::as_slice).unwrap_or(&[]);
        KindDelta {
            mean: stats::mean(v),
            count: v.len(),
        }
    }

    pub fn deltas_of(&self, kind: TokenKind) -> &[f64] {
        self.deltas.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn separation_auc(&self) -> Option<f64> {
        stats::auc(
            self.deltas_of(TokenKind::Correlated),
            self.deltas_of(TokenKind::Contradictory),
        )
    }

    pub fn record(&self, step: usize, train_loss: f64, fallbacks: u64) -> MetricsRecord {
        MetricsRecord {
            step,
            train_loss,
            acc_overall: ratio(self.correct, self.total),
            acc_correlated: ratio(self.correct_correlated, self.total_correlated),
            acc_contradictory_true: ratio(self.true_at_contradictory, self.total_contradictory),
            delta_correlated: self.delta_stats(TokenKind::Correlated),
            delta_irrelevant: self.delta_stats(TokenKind::Irrelevant),
            delta_contradictory: self.delta_stats(TokenKind::Contradictory),
            separation_auc: self.separation_auc(),
            fallbacks,
            wall_clock_s: None,
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Teacher-forced accuracy per kind and delta statistics per kind over
/// trusted examples. Parameters are only read.
pub fn evaluate(
    model_config: &ModelConfig,
    params: &ModelParams,
    examples: &[Example],
    cal_config: &CalConfig,
    seed: u64,
) -> Result<Evaluation> {
    let mut rng = crate::rng_from_seed(seed);
    let mut ev = Evaluation::default();
    for ex in examples.iter().filter(|e| e.trusted) {
        let with = model::forward_untaped(model_config, params, &ex.input, Some(&ex.prefix))?;
        let contrast = apply_condition(&ex.prefix, &cal_config.condition, &mut rng);
        let without = model::forward_untaped(model_config, params, &ex.input, contrast.as_ref())?;
        let delta = cal::delta(cal_config.delta, &with, &without, &ex.labels)?;
        for j in 0..ex.labels.len() {
            if !ex.trainable[j] {
                continue;
            }
            let pred = argmax(with.row(j));
            let kind = ex.kinds[j].expect("trainable positions carry a kind");
            ev.total += 1;
            ev.correct += usize::from(pred == ex.labels[j]);
            match kind {
                TokenKind::Correlated => {
                    ev.total_correlated += 1;
                    ev.correct_correlated += usize::from(pred == ex.labels[j]);
                }
                TokenKind::Contradictory => {
                    ev.total_contradictory += 1;
                    ev.true_at_contradictory += usize::from(Some(pred) == ex.truth[j]);
                }
                TokenKind::Irrelevant => {}
            }
            ev.deltas.entry(kind).or_default().push(delta[j]);
        }
    }
    Ok(ev)
}

/// One token's row in a weight report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    /// Index into the caption of the predicted (label) token.
    pub position: usize,
    pub token: usize,
    pub kind: Option<TokenKind>,
    pub trainable: bool,
    pub delta: f64,
    pub clamped: f64,
    pub pooled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub sample_index: usize,
    pub fell_back: bool,
    pub records: Vec<WeightRecord>,
}

impl WeightReport {
    pub fn from_weights(ex: &Example, weights: &cal::TokenWeights, fell_back: bool) -> Self {
        let records = (0..ex.labels.len())
            .map(|j| WeightRecord {
                position: j + 1,
                token: ex.labels[j],
                kind: ex.kinds[j],
                trainable: ex.trainable[j],
                delta: weights.delta[j],
                clamped: weights.clamped[j],
                pooled: weights.pooled[j],
            })
            .collect();
        WeightReport {
            sample_index: ex.index,
            fell_back,
            records,
        }
    }
}

/// The weights the loss would use for `ex`, computed through the same
/// graph routine as training (on the tape-free backend).
pub fn weight_report(
    model_config: &ModelConfig,
    params: &ModelParams,
    ex: &Example,
    cal_config: &CalConfig,
    rng: &mut Rng,
) -> Result<WeightReport> {
    let with = model::forward_untaped(model_config, params, &ex.input, Some(&ex.prefix))?;
    let contrast = apply_condition(&ex.prefix, &cal_config.condition, rng);
    let without = model::forward_untaped(model_config, params, &ex.input, contrast.as_ref())?;
    let s = cal::cal_loss_on_graph(
        &mut Eager,
        &with,
        &without,
        &ex.labels,
        &ex.trainable,
        cal_config,
    )?;
    Ok(WeightReport::from_weights(ex, &s.weights, s.fell_back))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub stage: Stage,
    pub cal_active: bool,
    pub loss: f64,
    pub fallbacks: usize,
}

/// Per-sample weight reports of the batch that produced a non-finite loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub reports: Vec<WeightReport>,
}

/// Owns everything a run mutates. Deterministic in the config.
pub struct Trainer {
    config: ExperimentConfig,
    params: ModelParams,
    adam: Adam,
    train: Vec<Example>,
    eval: Vec<Example>,
    step: usize,
    epoch: u64,
    order: Vec<Vec<usize>>,
    cursor: usize,
    contrast_rng: Rng,
    fallbacks: u64,
    loss_since_record: (f64, usize),
    diagnostics: Option<Diagnostics>,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train_corpus, eval_corpus) = build_corpora(&config)?;
        Self::with_corpora(config, &train_corpus, &eval_corpus)
    }

    pub fn with_corpora(config: ExperimentConfig, train: &Corpus, eval: &Corpus) -> Result<Self> {
        config.validate()?;
        let params =
            ModelParams::init(&config.model, derive_seed(config.optim.seed, streams::INIT))?;
        let train = build_examples(train, &config.model)?;
        let eval = build_examples(eval, &config.model)?;
        if train.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let adam_cfg = AdamConfig {
            lr: config.optim.lr,
            ..AdamConfig::default()
        };
        let adam = Adam::new(adam_cfg, &params.iter().collect::<Vec<_>>());
        let contrast_rng = crate::rng_from_seed(derive_seed(config.optim.seed, streams::CONTRAST));
        Ok(Trainer {
            config,
            params,
            adam,
            train,
            eval,
            step: 0,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            contrast_rng,
            fallbacks: 0,
            loss_since_record: (0.0, 0),
            diagnostics: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn train_examples(&self) -> &[Example] {
        &self.train
    }

    pub fn eval_examples(&self) -> &[Example] {
        &self.eval
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.optim.steps
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    pub fn diagnostics(&self) -> Option<&Diagnostics> {
        self.diagnostics.as_ref()
    }

    fn next_batch(&mut self) -> Result<Vec<usize>> {
        if self.cursor >= self.order.len() {
            let seed =
                derive_seed(self.config.optim.seed, streams::BATCHES).wrapping_add(self.epoch);
            self.order = build_batches(self.train.len(), self.config.optim.batch_size, seed)?;
            self.cursor = 0;
            self.epoch += 1;
        }
        self.cursor += 1;
        Ok(self.order[self.cursor - 1].clone())
    }

    /// Builds the batch loss on `tape` and returns it with the per-sample
    /// weight reports (empty when the plain objective is used).
    fn batch_loss(
        &mut self,
        tape: &mut Tape,
        batch: &[usize],
        cal_active: bool,
    ) -> Result<(crate::Var, Vec<WeightReport>, usize)> {
        let cfg = &self.config;
        let bound = self.params.bind(tape);
        let mut losses = Vec::with_capacity(batch.len());
        let mut reports = Vec::new();
        let mut fallbacks = 0;
        for &i in batch {
            let ex = &self.train[i];
            if cal_active {
                let (with, without) = forward_contrast(
                    tape,
                    &cfg.model,
                    &self.params,
                    &bound,
                    &ex.input,
                    &ex.prefix,
                    &cfg.cal.condition,
                    &mut self.contrast_rng,
                )?;
                let s = cal::cal_loss_on_graph(
                    tape,
                    &with,
                    &without,
                    &ex.labels,
                    &ex.trainable,
                    &cfg.cal,
                )?;
                fallbacks += usize::from(s.fell_back);
                reports.push(WeightReport::from_weights(ex, &s.weights, s.fell_back));
                losses.push(s.loss);
            } else {
                let with =
                    model::forward_bound(tape, &cfg.model, &bound, &ex.input, Some(&ex.prefix))?;
                losses.push(cal::mle_loss(tape, &with, &ex.labels, &ex.trainable)?);
            }
        }
        Ok((cal::batch_mean(tape, &losses)?, reports, fallbacks))
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.is_done() {
            return Err(Error::Contract("training already finished".into()));
        }
        let step = self.step;
        let stage = Stage::at(&self.config, step);
        let cal_active = self.config.cal_active(step);
        let batch = self.next_batch()?;
        let mut tape = Tape::new();
        let (loss, reports, fallbacks) = self.batch_loss(&mut tape, &batch, cal_active)?;
        let loss_value = tape.tensor(loss).data()[0];
        if !loss_value.is_finite() {
            self.diagnostics = Some(Diagnostics { step, reports });
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        tape.backward(loss)?;
        let mut grads = tape.param_grads(self.params.len());
        if stage == Stage::Pretrain {
            for (i, g) in grads.iter_mut().enumerate() {
                if i != PROJECTOR_INDEX {
                    *g = None;
                }
            }
        }
        if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            self.diagnostics = Some(Diagnostics { step, reports });
            return Err(Error::NonFinite(format!("gradients at step {step}")));
        }
        let mut params: Vec<_> = self.params.iter_mut().collect();
        self.adam.step(&mut params, &grads)?;
        self.step += 1;
        self.fallbacks += fallbacks as u64;
        self.loss_since_record.0 += loss_value;
        self.loss_since_record.1 += 1;
        Ok(StepReport {
            step,
            stage,
            cal_active,
            loss: loss_value,
            fallbacks,
        })
    }

    /// Whether a record is due after the step just taken.
    pub fn record_due(&self) -> bool {
        let every = self.config.eval_every;
        self.is_done() || (every > 0 && self.step % every == 0)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(
            &self.config.model,
            &self.params,
            &self.eval,
            &self.config.cal,
            derive_seed(self.config.optim.seed, streams::EVAL_CONTRAST),
        )
    }

    /// Evaluates and resets the running training-loss mean.
    pub fn record(&mut self) -> Result<MetricsRecord> {
        let ev = self.evaluate()?;
        let (sum, n) = self.loss_since_record;
        self.loss_since_record = (0.0, 0);
        let mean = if n > 0 { sum / n as f64 } else { f64::NAN };
        Ok(ev.record(self.step, mean, self.fallbacks))
    }
}

/// Runs a full training job and returns the final parameters with every
/// metrics record.
pub fn train(config: ExperimentConfig) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    let mut trainer = Trainer::new(config)?;
    let mut records = Vec::new();
    while !trainer.is_done() {
        trainer.step()?;
        if trainer.record_due() {
            records.push(trainer.record()?);
        }
    }
    Ok((trainer.into_params(), records))
}
