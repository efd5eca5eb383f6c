//! Synthetic captioning data with per-token ground truth.
//!
//! A scene is four categorical attributes. Its "image" is a block one-hot
//! feature matrix; its caption fills a template where attribute words are
//! visually correlated, template and filler words are visually irrelevant,
//! and an optionally injected wrong attribute word is visually
//! contradictory.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, VisualPrefix};
use crate::tensor::Tensor;
use crate::Rng;

pub const COLORS: [&str; 8] = [
    "red", "green", "blue", "yellow", "purple", "orange", "black", "white",
];
pub const SHAPES: [&str; 8] = [
    "cube", "sphere", "cone", "cylinder", "pyramid", "ring", "star", "torus",
];
pub const COUNTS: [&str; 4] = ["one", "two", "three", "four"];
pub const TEXTURES: [&str; 4] = ["smooth", "rough", "striped", "dotted"];

const PROMPTS: [&str; 4] = [
    "<bos> describe the image :",
    "<bos> what is in the picture ?",
    "<bos> caption this scene :",
    "<bos> tell me about the image :",
];

// {c} count, {t} texture, {k} color, {s} shape, {f} filler phrase
const TEMPLATES: [&str; 4] = [
    "there are {c} {t} {k} {s} {f} . <eos>",
    "a {k} {s} with {t} surface , {c} in total , {f} . <eos>",
    "we can see {c} {s} that are {k} and {t} {f} . <eos>",
    "this image shows {c} {k} {s} , each item looks {t} , {f} . <eos>",
];

/// Scene-independent phrases; their words are visually irrelevant.
const FILLERS: [&str; 24] = [
    "in a plain setting",
    "on a simple background",
    "in a quiet room",
    "under soft light",
    "near an old wall",
    "on a wooden table",
    "beside a large window",
    "during a calm morning",
    "at the end of the day",
    "inside an empty hall",
    "against a gray backdrop",
    "with nothing else around",
    "on the stone floor",
    "in the far corner",
    "by the open door",
    "under a bright lamp",
    "next to a small shelf",
    "on a clean desk",
    "in a narrow hallway",
    "below a high ceiling",
    "after a long rain",
    "before the evening",
    "across the tiled ground",
    "within a dim studio",
];

/// Width of the one-hot attribute blocks in a feature row.
pub const ATTRIBUTE_DIMS: usize = 8 + 8 + 4 + 4;
/// Smallest noise block appended after the attribute blocks.
pub const NOISE_DIMS: usize = 8;
pub const MIN_FEATURE_DIM: usize = ATTRIBUTE_DIMS + NOISE_DIMS;
pub const FEATURE_GAIN: f64 = 1.0;
pub const FEATURE_NOISE_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Color,
    Shape,
    Count,
    Texture,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Color, Slot::Shape, Slot::Count, Slot::Texture];

    pub fn words(self) -> &'static [&'static str] {
        match self {
            Slot::Color => &COLORS,
            Slot::Shape => &SHAPES,
            Slot::Count => &COUNTS,
            Slot::Texture => &TEXTURES,
        }
    }

    pub fn cardinality(self) -> usize {
        self.words().len()
    }

    fn block_offset(self) -> usize {
        match self {
            Slot::Color => 0,
            Slot::Shape => 8,
            Slot::Count => 16,
            Slot::Texture => 20,
        }
    }
}

/// Ground-truth relation of a response token to the scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Correlated,
    Irrelevant,
    Contradictory,
}

impl TokenKind {
    pub const ALL: [TokenKind; 3] = [
        TokenKind::Correlated,
        TokenKind::Irrelevant,
        TokenKind::Contradictory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Correlated => "correlated",
            TokenKind::Irrelevant => "irrelevant",
            TokenKind::Contradictory => "contradictory",
        }
    }
}

/// Closed word-level vocabulary.
#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<&'static str>,
    ids: BTreeMap<&'static str, usize>,
}

impl Vocab {
    /// Every word the generator can emit, in first-seen order.
    pub fn standard() -> Self {
        let mut words: Vec<&'static str> = Vec::new();
        let mut ids = BTreeMap::new();
        let mut add = |w: &'static str| {
            if !ids.contains_key(w) {
                ids.insert(w, words.len());
                words.push(w);
            }
        };
        let sources = PROMPTS.iter().chain(&TEMPLATES).chain(&FILLERS);
        for text in sources {
            for w in text.split(' ') {
                if !w.starts_with('{') {
                    add(w);
                }
            }
        }
        for slot in Slot::ALL {
            for &w in slot.words() {
                add(w);
            }
        }
        Vocab { words, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&'static str> {
        self.words.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::Contract(format!("word {w:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            let w = self.word(id).ok_or(Error::Vocab {
                id,
                vocab: self.len(),
            })?;
            if i > 0 {
                out.push(' ');
            }
            out.push_str(w);
        }
        Ok(out)
    }
}

/// One synthetic image, described by its attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub color: usize,
    pub shape: usize,
    /// Number of objects, 1 to 4.
    pub count: usize,
    pub texture: usize,
}

impl Scene {
    /// Index of the attribute value within `slot.words()`.
    pub fn value(&self, slot: Slot) -> usize {
        match slot {
            Slot::Color => self.color,
            Slot::Shape => self.shape,
            Slot::Count => self.count - 1,
            Slot::Texture => self.texture,
        }
    }

    pub fn word(&self, slot: Slot) -> &'static str {
        slot.words()[self.value(slot)]
    }

    pub fn validate(&self) -> Result<()> {
        let ok =
            self.color < 8 && self.shape < 8 && (1..=4).contains(&self.count) && self.texture < 4;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "scene attributes out of range: {self:?}"
            )))
        }
    }
}

/// Uniform, independent attributes.
pub fn generate_scene(scene_id: u64, rng: &mut Rng) -> Scene {
    Scene {
        scene_id,
        color: rng.random_range(0..8),
        shape: rng.random_range(0..8),
        count: rng.random_range(1..=4),
        texture: rng.random_range(0..4),
    }
}

/// Block one-hot attribute encoding tiled over `prefix_len` rows, with
/// per-row Gaussian noise confined to the trailing noise block.
pub fn render_features(scene: &Scene, config: &ModelConfig, rng: &mut Rng) -> Result<VisualPrefix> {
    if config.feature_dim < MIN_FEATURE_DIM {
        return Err(Error::Config(format!(
            "feature_dim {} too small; need at least {MIN_FEATURE_DIM}",
            config.feature_dim
        )));
    }
    if config.prefix_len == 0 {
        return Err(Error::Config("scenes need prefix_len >= 1".into()));
    }
    scene.validate()?;
    let dim = config.feature_dim;
    let noise = Normal::new(0.0, FEATURE_NOISE_STD).expect("valid std");
    let mut data = vec![0.0; config.prefix_len * dim];
    for row in data.chunks_exact_mut(dim) {
        for slot in Slot::ALL {
            row[slot.block_offset() + scene.value(slot)] = FEATURE_GAIN;
        }
        for v in &mut row[ATTRIBUTE_DIMS..] {
            *v = noise.sample(rng);
        }
    }
    VisualPrefix::new(Tensor::matrix(config.prefix_len, dim, data)?)
}

/// Token sequence with ground-truth labels on the response part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCaption {
    pub tokens: Vec<usize>,
    /// `None` on prompt positions.
    pub kinds: Vec<Option<TokenKind>>,
    /// Attribute slot an attribute word fills, if any.
    pub slots: Vec<Option<Slot>>,
    pub prompt_len: usize,
}

impl LabeledCaption {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contradictions(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| **k == Some(TokenKind::Contradictory))
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.kinds.len() != n || self.slots.len() != n || self.prompt_len >= n {
            return Err(Error::Contract(
                "caption fields have inconsistent lengths".into(),
            ));
        }
        let labels_ok = self
            .kinds
            .iter()
            .enumerate()
            .all(|(i, k)| k.is_some() == (i >= self.prompt_len));
        if !labels_ok {
            return Err(Error::Contract(
                "kinds must be set exactly on response positions".into(),
            ));
        }
        if !self.kinds.contains(&Some(TokenKind::Correlated)) {
            return Err(Error::Contract("caption has no correlated token".into()));
        }
        Ok(())
    }
}

/// Fills a random template from `scene`. With probability
/// `contradiction_rate` exactly one attribute word is swapped for another
/// value of the same slot and labeled contradictory.
pub fn generate_caption(
    scene: &Scene,
    contradiction_rate: f64,
    vocab: &Vocab,
    rng: &mut Rng,
) -> Result<LabeledCaption> {
    if !(0.0..=1.0).contains(&contradiction_rate) {
        return Err(Error::Config(format!(
            "contradiction_rate {contradiction_rate} outside [0, 1]"
        )));
    }
    let prompt = PROMPTS[rng.random_range(0..PROMPTS.len())];
    let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
    let filler = FILLERS[rng.random_range(0..FILLERS.len())];
    let contradict = if rng.random_bool(contradiction_rate) {
        let slot = Slot::ALL[rng.random_range(0..4)];
        let offset = rng.random_range(1..slot.cardinality());
        Some((slot, (scene.value(slot) + offset) % slot.cardinality()))
    } else {
        None
    };

    let mut caption = LabeledCaption {
        tokens: Vec::new(),
        kinds: Vec::new(),
        slots: Vec::new(),
        prompt_len: 0,
    };
    let push = |c: &mut LabeledCaption, word: &str, kind: Option<TokenKind>, slot| -> Result<()> {
        let id = vocab
            .id(word)
            .ok_or_else(|| Error::Contract(format!("word {word:?} not in vocabulary")))?;
        c.tokens.push(id);
        c.kinds.push(kind);
        c.slots.push(slot);
        Ok(())
    };
    for w in prompt.split(' ') {
        push(&mut caption, w, None, None)?;
    }
    caption.prompt_len = caption.tokens.len();
    for part in template.split(' ') {
        let slot = match part {
            "{c}" => Some(Slot::Count),
            "{t}" => Some(Slot::Texture),
            "{k}" => Some(Slot::Color),
            "{s}" => Some(Slot::Shape),
            "{f}" => {
                for w in filler.split(' ') {
                    push(&mut caption, w, Some(TokenKind::Irrelevant), None)?;
                }
                continue;
            }
            _ => None,
        };
        match slot {
            None => push(&mut caption, part, Some(TokenKind::Irrelevant), None)?,
            Some(s) => match contradict {
                Some((cs, value)) if cs == s => push(
                    &mut caption,
                    s.words()[value],
                    Some(TokenKind::Contradictory),
                    Some(s),
                )?,
                _ => push(
                    &mut caption,
                    scene.word(s),
                    Some(TokenKind::Correlated),
                    Some(s),
                )?,
            },
        }
    }
    Ok(caption)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// A scene, the seed its features are rendered from, and the caption it
/// is paired with (possibly another sample's after corruption).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub scene: Scene,
    pub feature_seed: u64,
    pub caption: LabeledCaption,
    /// Index of the sample whose caption this is; differs from the
    /// sample's own index after a swap.
    pub caption_source: usize,
}

impl Sample {
    /// Whether `kinds` can be trusted as ground truth for this scene.
    pub fn is_corrupted(&self, own_index: usize) -> bool {
        self.caption_source != own_index
    }

    pub fn prefix(&self, config: &ModelConfig) -> Result<VisualPrefix> {
        render_features(
            &self.scene,
            config,
            &mut crate::rng_from_seed(self.feature_seed),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub split: Split,
    pub generation_seed: u64,
    pub corruption_log: Vec<(usize, usize)>,
}

impl Corpus {
    /// Deterministic in `(size, contradiction_rate, seed)`.
    pub fn generate(size: usize, contradiction_rate: f64, split: Split, seed: u64) -> Result<Self> {
        let vocab = Vocab::standard();
        let mut rng = crate::rng_from_seed(seed);
        let mut samples = Vec::with_capacity(size);
        for i in 0..size {
            let scene = generate_scene(i as u64, &mut rng);
            let caption = generate_caption(&scene, contradiction_rate, &vocab, &mut rng)?;
            let feature_seed = rng.next_u64();
            samples.push(Sample {
                scene,
                feature_seed,
                caption,
                caption_source: i,
            });
        }
        Ok(Corpus {
            samples,
            split,
            generation_seed: seed,
            corruption_log: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples paired with another sample's caption.
    pub fn foreign_captions(&self) -> usize {
        self.samples
            .iter()
            .enumerate()
            .filter(|(i, s)| s.is_corrupted(*i))
            .count()
    }
}

/// Exchanges captions between `⌊ratio·n/2⌋` random disjoint pairs.
///
/// Indices are drawn without replacement, shuffled, and paired
/// consecutively. When fewer than two samples would be touched the corpus
/// comes back unchanged.
pub fn swap_corrupt(corpus: &Corpus, ratio: f64, rng: &mut Rng) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("swap ratio {ratio} outside [0, 1]")));
    }
    let n = corpus.len();
    let pairs = (ratio * n as f64 / 2.0) as usize;
    let mut out = corpus.clone();
    if pairs == 0 {
        return Ok(out);
    }
    let mut chosen = index::sample(rng, n, 2 * pairs).into_vec();
    chosen.shuffle(rng);
    for pair in chosen.chunks_exact(2) {
        let (i, j) = (pair[0], pair[1]);
        let ci = out.samples[i].caption.clone();
        let si = out.samples[i].caption_source;
        out.samples[i].caption = core::mem::replace(&mut out.samples[j].caption, ci);
        out.samples[i].caption_source = core::mem::replace(&mut out.samples[j].caption_source, si);
        out.corruption_log.push((i, j));
    }
    Ok(out)
}

/// Model-ready view of one sample: inputs, next-token labels and masks.
#[derive(Clone, Debug)]
pub struct Example {
    pub index: usize,
    pub prefix: VisualPrefix,
    /// Caption tokens except the last.
    pub input: Vec<usize>,
    /// Caption tokens shifted by one; `labels[j]` follows `input[..=j]`.
    pub labels: Vec<usize>,
    /// Only response tokens are trained.
    pub trainable: Vec<bool>,
    pub kinds: Vec<Option<TokenKind>>,
    /// Scene's own word for attribute positions, judged against the image.
    pub truth: Vec<Option<usize>>,
    pub trusted: bool,
}

impl Example {
    pub fn new(index: usize, sample: &Sample, config: &ModelConfig, vocab: &Vocab) -> Result<Self> {
        let cap = &sample.caption;
        cap.validate()?;
        let n = cap.len();
        let truth = cap.slots[1..]
            .iter()
            .map(|s| {
                s.map(|slot| {
                    vocab
                        .id(sample.scene.word(slot))
                        .expect("attribute in vocab")
                })
            })
            .collect();
        Ok(Example {
            index,
            prefix: sample.prefix(config)?,
            input: cap.tokens[..n - 1].to_vec(),
            labels: cap.tokens[1..].to_vec(),
            trainable: (1..n).map(|i| i >= cap.prompt_len).collect(),
            kinds: cap.kinds[1..].to_vec(),
            truth,
            trusted: !sample.is_corrupted(index),
        })
    }
}

pub fn build_examples(corpus: &Corpus, config: &ModelConfig) -> Result<Vec<Example>> {
    let vocab = Vocab::standard();
    corpus
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| Example::new(i, s, config, &vocab))
        .collect()
}

/// One epoch of sample indices, shuffled by `seed` and cut into batches.
/// The last batch may be short.
pub fn build_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng_from_seed(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
