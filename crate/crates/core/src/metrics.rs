//! Sequence-comparison metrics and n-gram entropy fluency.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Exact match, BLEU-4 and ROUGE-L of one candidate against one reference.
/// BLEU and ROUGE-L are on a 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub em: f64,
    pub bleu: f64,
    pub rouge_l: f64,
}

impl MetricRow {
    pub fn score(candidate: &str, reference: &str) -> Self {
        let em = exact_match(candidate, reference);
        if em == 1 {
            return Self { em: 1.0, bleu: 100.0, rouge_l: 100.0 };
        }
        let (c, r) = (tokenize(candidate), tokenize(reference));
        let bleu = if r.is_empty() { 0.0 } else { bleu(&c, &r) };
        let rouge_l = if r.is_empty() { 0.0 } else { rouge_l(&c, &r) };
        Self { em: 0.0, bleu, rouge_l }
    }

    pub fn mean(rows: &[MetricRow]) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            em: rows.iter().map(|r| r.em).sum::<f64>() / n,
            bleu: rows.iter().map(|r| r.bleu).sum::<f64>() / n,
            rouge_l: rows.iter().map(|r| r.rouge_l).sum::<f64>() / n,
        }
    }
}

/// Splits on whitespace and around punctuation; punctuation characters are
/// kept as their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() && ch != '_' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// 1 when the strings agree up to whitespace: both tokenize to the same
/// sequence. Case and token content are significant.
pub fn exact_match(candidate: &str, reference: &str) -> u8 {
    u8::from(tokenize(candidate) == tokenize(reference))
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with add-one smoothing on every n-gram precision and the
/// standard brevity penalty, scaled to 0–100. An empty candidate scores 0.
pub fn bleu<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let clipped: usize = cand.iter().map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0))).sum();
        let total = candidate.len().saturating_sub(n - 1);
        log_sum += ((clipped as f64 + 1.0) / (total as f64 + 1.0)).ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    100.0 * bp * (log_sum / 4.0).exp()
}

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1, scaled to 0–100.
pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    100.0 * 2.0 * p * r / (p + r)
}

/// n-gram counts of a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramDistribution {
    pub n: usize,
    pub counts: HashMap<Vec<String>, usize>,
    pub total: usize,
}

impl NgramDistribution {
    pub fn new<T: AsRef<str>>(tokens: &[T], n: usize) -> Self {
        let counts: HashMap<Vec<String>, usize> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(k, v)| (k.into_iter().map(str::to_string).collect(), v))
            .collect();
        let total = counts.values().sum();
        Self { n, counts, total }
    }

    /// `−Σ f(k) log₂ f(k)` over n-grams `k` with frequency `f(k)`.
    pub fn entropy(&self) -> f64 {
        let total = self.total as f64;
        let mut keys: Vec<_> = self.counts.iter().collect();
        keys.sort();
        let h: f64 = keys
            .into_iter()
            .map(|(_, &c)| {
                let f = c as f64 / total;
                -f * f.log2()
            })
            .sum();
        h.max(0.0)
    }
}

/// `(1/3)·H(bigrams) + (2/3)·H(trigrams)`.
pub fn fluency_entropy<T: AsRef<str>>(tokens: &[T]) -> Result<f64> {
    if tokens.len() < 3 {
        return usage(format!("fluency needs at least 3 tokens, got {}", tokens.len()));
    }
    let h2 = NgramDistribution::new(tokens, 2).entropy();
    let h3 = NgramDistribution::new(tokens, 3).entropy();
    Ok(h2 / 3.0 + 2.0 * h3 / 3.0)
}
