use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::EOS;
use super::model::{argmax, Substitution, ToyDecoder};
use crate::error::{usage, Result};

/// Decoding strategy for free generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecodeMode {
    Greedy,
    /// Seeded sampling restricted to the `k` most probable tokens.
    TopK { k: usize },
}

/// A value injected at one layer's down projection from the last prompt
/// position onwards while decoding.
#[derive(Debug, Clone, Copy)]
pub struct Steering<'a> {
    pub layer: usize,
    pub value: &'a [f64],
}

/// Greedy continuation of `prompt`, stopping after `max_new` tokens or at
/// end-of-sequence (which is not included in the output).
pub fn greedy_decode(model: &ToyDecoder, prompt: &[u32], max_new: usize) -> Result<Vec<u32>> {
    decode_with(model, prompt, max_new, None, true, |row, _| argmax(row) as u32)
}

/// Greedy decoding with an optional down-projection override.
pub fn greedy_decode_steered(
    model: &ToyDecoder,
    prompt: &[u32],
    max_new: usize,
    steering: Option<Steering>,
) -> Result<Vec<u32>> {
    decode_with(model, prompt, max_new, steering, true, |row, _| argmax(row) as u32)
}

/// Seeded top-k sampling. Every emitted token is one of the `k` highest-logit
/// tokens at its step; `k = 1` reproduces greedy decoding.
pub fn sample_topk(
    model: &ToyDecoder,
    prompt: &[u32],
    k: usize,
    max_new: usize,
    seed: u64,
    stop_at_eos: bool,
) -> Result<Vec<u32>> {
    sample_topk_steered(model, prompt, k, max_new, seed, stop_at_eos, None)
}

pub fn sample_topk_steered(
    model: &ToyDecoder,
    prompt: &[u32],
    k: usize,
    max_new: usize,
    seed: u64,
    stop_at_eos: bool,
    steering: Option<Steering>,
) -> Result<Vec<u32>> {
    if k == 0 {
        return usage("top-k needs k >= 1");
    }
    if k > model.config.vocab_size {
        return usage(format!("k = {k} exceeds vocabulary size {}", model.config.vocab_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    decode_with(model, prompt, max_new, steering, stop_at_eos, |row, _| {
        let top = top_k_indices(row, k);
        let max = row[top[0]];
        let weights: Vec<f64> = top.iter().map(|&i| (row[i] - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (&i, w) in top.iter().zip(&weights) {
            if u < *w {
                return i as u32;
            }
            u -= w;
        }
        top[top.len() - 1] as u32
    })
}

/// Indices of the `k` largest entries, largest first; ties go to the lower index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Generates with `mode` and an optional override; top-k runs ignore
/// end-of-sequence and always produce `max_new` tokens unless the context fills.
pub fn generate(
    model: &ToyDecoder,
    prompt: &[u32],
    max_new: usize,
    mode: DecodeMode,
    seed: u64,
    steering: Option<Steering>,
) -> Result<Vec<u32>> {
    match mode {
        DecodeMode::Greedy => greedy_decode_steered(model, prompt, max_new, steering),
        DecodeMode::TopK { k } => sample_topk_steered(model, prompt, k, max_new, seed, false, steering),
    }
}

fn decode_with(
    model: &ToyDecoder,
    prompt: &[u32],
    max_new: usize,
    steering: Option<Steering>,
    stop_at_eos: bool,
    mut choose: impl FnMut(&[f64], usize) -> u32,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return usage("prompt is empty");
    }
    model.check_tokens(prompt)?;
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    let start = prompt.len() - 1;
    for step in 0..max_new {
        let sub = steering.map(|s| Substitution { layer: s.layer, start, end: None, value: s.value });
        let cache = model.forward(&seq, sub.as_ref())?;
        let next = choose(cache.logits.row(seq.len() - 1), step);
        if stop_at_eos && next == EOS {
            break;
        }
        out.push(next);
        if seq.len() == model.config.max_seq_len {
            break;
        }
        seq.push(next);
    }
    Ok(out)
}
