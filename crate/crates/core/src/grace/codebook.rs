use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoder::{encode_key, EncoderWeights};
use super::value::{optimize_value, ValueOptions};
use crate::benchdata::{EditInstance, Vocab};
use crate::error::{usage, Error, Result};
use crate::numcore::euclidean;
use crate::toymodel::{greedy_decode_steered, prompt_key, KeyMode, Steering, ToyDecoder};

/// Slack subtracted when splitting two overlapping radii so the balls end
/// up strictly disjoint.
const SPLIT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub radius: f64,
    /// Digest of the edit's input and output, used to tell conflicting edits
    /// apart from repeated ones.
    pub target_digest: String,
}

/// Key-value adaptor memory for one edit layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub edit_layer: usize,
    pub key_mode: KeyMode,
    pub encoder: Option<EncoderWeights>,
    pub entries: Vec<CodebookEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraceOptions {
    pub initial_radius: f64,
    pub value: ValueOptions,
}

impl Default for GraceOptions {
    fn default() -> Self {
        Self { initial_radius: 1.0, value: ValueOptions { exit_loss: 0.02, ..ValueOptions::default() } }
    }
}

/// What happened to existing entries when a new one was added.
#[derive(Debug, Clone, PartialEq)]
pub struct EditReport {
    pub index: usize,
    /// Entries whose radius shrank to make room.
    pub split: Vec<usize>,
    pub value_loss: f64,
    pub decodable: bool,
}

pub fn target_digest(x: &str, y: &str) -> String {
    let mut h = Sha256::new();
    h.update(x.as_bytes());
    h.update([0u8]);
    h.update(y.as_bytes());
    hex::encode(&h.finalize()[..16])
}

impl Codebook {
    pub fn new(edit_layer: usize, key_mode: KeyMode, encoder: Option<EncoderWeights>) -> Self {
        Self { edit_layer, key_mode, encoder, entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Key of `prompt` in the codebook's matching space.
    pub fn key_for(&self, model: &ToyDecoder, prompt: &[u32]) -> Result<Vec<f64>> {
        let raw = prompt_key(model, prompt, self.edit_layer, self.key_mode)?;
        match &self.encoder {
            Some(enc) => encode_key(enc, &raw),
            None => Ok(raw),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::checkpoint::save(path, "codebook", self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        crate::checkpoint::load(path, "codebook")
    }
}

/// Adds one edit to the codebook.
///
/// Balls of entries with different targets must stay disjoint: any existing
/// entry overlapping the new key's ball has both radii reduced to just under
/// half their key distance. Overlapping an entry holding the same edit, or
/// landing exactly on an existing key, is an edit conflict and leaves the
/// codebook untouched.
pub fn grace_edit(
    book: &mut Codebook,
    model: &ToyDecoder,
    instance: &EditInstance,
    opts: GraceOptions,
) -> Result<EditReport> {
    if opts.initial_radius.is_nan() || opts.initial_radius <= 0.0 {
        return usage(format!("initial radius must be positive, got {}", opts.initial_radius));
    }
    let vocab = Vocab::standard();
    let prompt = vocab.prompt(&instance.x);
    let target = vocab.target(&instance.y);
    let key = book.key_for(model, &prompt)?;
    let digest = target_digest(&instance.x, &instance.y);

    let mut radius = opts.initial_radius;
    let mut shrink = Vec::new();
    for (i, e) in book.entries.iter().enumerate() {
        let d = euclidean(&key, &e.key);
        if d > e.radius + radius {
            continue;
        }
        if e.target_digest == digest {
            return Err(Error::EditConflict(format!(
                "{} overlaps entry {i}, which holds the same edit",
                instance.id
            )));
        }
        let half = d / 2.0 - SPLIT_SLACK;
        if half <= 0.0 {
            return Err(Error::EditConflict(format!("{} has the same key as entry {i}", instance.id)));
        }
        radius = radius.min(half);
        shrink.push((i, half));
    }

    let found = optimize_value(model, book.edit_layer, &prompt, &target, opts.value)?;
    for &(i, half) in &shrink {
        let e = &mut book.entries[i];
        e.radius = e.radius.min(half);
    }
    book.entries.push(CodebookEntry { key, value: found.value, radius, target_digest: digest });
    Ok(EditReport {
        index: book.entries.len() - 1,
        split: shrink.into_iter().map(|(i, _)| i).collect(),
        value_loss: found.loss,
        decodable: found.decodable,
    })
}

/// Nearest entry whose ball contains `query`; ties go to the lower index.
pub fn deferral_lookup<'a>(book: &'a Codebook, query: &[f64]) -> Option<(usize, &'a CodebookEntry)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in book.entries.iter().enumerate() {
        let d = euclidean(query, &e.key);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.filter(|&(i, d)| d <= book.entries[i].radius).map(|(i, _)| (i, &book.entries[i]))
}

/// Greedy decoding through the edited model: the prompt's key is computed
/// once on the unedited pass and, if it falls inside an entry's ball, that
/// entry's value replaces the edit layer's output from the last prompt
/// position on.
pub fn edited_generate(model: &ToyDecoder, book: &Codebook, prompt: &[u32], max_new: usize) -> Result<Vec<u32>> {
    let value = matched_value(model, book, prompt)?;
    greedy_decode_steered(model, prompt, max_new, value.map(|value| Steering { layer: book.edit_layer, value }))
}

/// Value the codebook would inject for `prompt`, if any.
pub fn matched_value<'a>(model: &ToyDecoder, book: &'a Codebook, prompt: &[u32]) -> Result<Option<&'a [f64]>> {
    if book.is_empty() {
        return Ok(None);
    }
    let key = book.key_for(model, prompt)?;
    Ok(deferral_lookup(book, &key).map(|(_, e)| e.value.as_slice()))
}
