//! Line-delimited JSON corpus files, one sample per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cal_core::data::{Corpus, LabeledCaption, Sample, Scene, Slot, Split, TokenKind};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    version: u32,
    split: Split,
    generation_seed: u64,
    index: usize,
    scene: Scene,
    feature_seed: u64,
    tokens: Vec<usize>,
    kinds: Vec<Option<TokenKind>>,
    slots: Vec<Option<Slot>>,
    prompt_len: usize,
    caption_source: usize,
    corrupted: bool,
}

pub fn write(corpus: &Corpus, out: &mut impl Write) -> Result<()> {
    for (index, s) in corpus.samples.iter().enumerate() {
        let line = Line {
            version: SCHEMA_VERSION,
            split: corpus.split,
            generation_seed: corpus.generation_seed,
            index,
            scene: s.scene,
            feature_seed: s.feature_seed,
            tokens: s.caption.tokens.clone(),
            kinds: s.caption.kinds.clone(),
            slots: s.caption.slots.clone(),
            prompt_len: s.caption.prompt_len,
            caption_source: s.caption_source,
            corrupted: s.is_corrupted(index),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n").map_err(HarnessError::io("<corpus>"))?;
    }
    Ok(())
}

/// Reads a corpus back. The corruption log is rebuilt from the caption
/// sources, ordered by the smaller index of each pair.
pub fn read(input: impl BufRead) -> Result<Corpus> {
    let mut samples = Vec::new();
    let mut header: Option<(Split, u64)> = None;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(HarnessError::io("<corpus>"))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| HarnessError::Corpus {
            line: n + 1,
            reason,
        };
        let l: Line = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if l.version != SCHEMA_VERSION {
            return Err(bad(format!("unsupported version {}", l.version)));
        }
        if l.index != samples.len() {
            return Err(bad(format!(
                "expected index {}, got {}",
                samples.len(),
                l.index
            )));
        }
        match header {
            None => header = Some((l.split, l.generation_seed)),
            Some(h) if h != (l.split, l.generation_seed) => {
                return Err(bad("split or generation seed changes mid-file".into()))
            }
            Some(_) => {}
        }
        let caption = LabeledCaption {
            tokens: l.tokens,
            kinds: l.kinds,
            slots: l.slots,
            prompt_len: l.prompt_len,
        };
        caption.validate().map_err(|e| bad(e.to_string()))?;
        l.scene.validate().map_err(|e| bad(e.to_string()))?;
        if (l.caption_source != l.index) != l.corrupted {
            return Err(bad("corruption flag disagrees with caption source".into()));
        }
        samples.push(Sample {
            scene: l.scene,
            feature_seed: l.feature_seed,
            caption,
            caption_source: l.caption_source,
        });
    }
    let (split, generation_seed) = header.ok_or(HarnessError::Corpus {
        line: 0,
        reason: "empty corpus".into(),
    })?;
    let mut corruption_log = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let j = s.caption_source;
        if j > i {
            if samples.get(j).map(|o| o.caption_source) != Some(i) {
                return Err(HarnessError::Corpus {
                    line: i + 1,
                    reason: format!("caption source {j} is not a symmetric swap"),
                });
            }
            corruption_log.push((i, j));
        }
    }
    Ok(Corpus {
        samples,
        split,
        generation_seed,
        corruption_log,
    })
}

pub fn save(path: &Path, corpus: &Corpus) -> Result<()> {
    let f = fs::File::create(path).map_err(HarnessError::io(path))?;
    let mut w = BufWriter::new(f);
    write(corpus, &mut w)?;
    w.flush().map_err(HarnessError::io(path))
}

pub fn load(path: &Path) -> Result<Corpus> {
    let f = fs::File::open(path).map_err(HarnessError::io(path))?;
    read(BufReader::new(f))
}
