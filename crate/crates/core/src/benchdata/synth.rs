use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lexicon::{OpTemplate, OPS, RESULT_NAMES, SYNONYMS, VARIABLES};
use super::{CorpusPair, Task};

/// Clause order of a generated intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ClauseOrder {
    /// `"{verb} {object} {tail}"`
    Direct,
    /// `"given {object} , {verb} it {tail}"`
    Fronted,
}

pub(crate) fn fill(phrase: &str, a: &str, b: &str) -> String {
    phrase.replace("{a}", a).replace("{b}", b)
}

pub(crate) fn assemble(verb: &str, object: &str, tail: &str, order: ClauseOrder) -> String {
    let mut words: Vec<&str> = Vec::new();
    match order {
        ClauseOrder::Direct => {
            words.extend(verb.split_whitespace());
            words.extend(object.split_whitespace());
        }
        ClauseOrder::Fronted => {
            words.push("given");
            words.extend(object.split_whitespace());
            words.push(",");
            words.extend(verb.split_whitespace());
            words.push("it");
        }
    }
    words.extend(tail.split_whitespace());
    words.join(" ")
}

fn pick_synonyms(text: &str, rng: &mut ChaCha8Rng) -> String {
    text.split_whitespace()
        .map(|w| match SYNONYMS.iter().find(|(x, y)| *x == w || *y == w) {
            Some((x, y)) => {
                if rng.gen_bool(0.5) {
                    *x
                } else {
                    *y
                }
            }
            None => w,
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn render(op: &OpTemplate, a: &str, b: &str, rng: &mut ChaCha8Rng) -> (String, String) {
    let order = if rng.gen_bool(0.5) { ClauseOrder::Direct } else { ClauseOrder::Fronted };
    let intent = assemble(&fill(op.verb, a, b), &fill(op.object, a, b), &fill(op.tail, a, b), order);
    let intent = pick_synonyms(&intent, rng);
    let expr = op.exprs.choose(rng).expect("operation has code");
    let result = RESULT_NAMES.choose(rng).expect("result names");
    (intent, format!("{result} = {}", fill(expr, a, b)))
}

/// Per-operation pair counts: as even as each operation's number of distinct
/// variable combinations allows.
fn quotas(capacity: &[usize], size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..capacity.len()).collect();
    order.sort_by_key(|&i| (capacity[i], i));
    let mut out = vec![0; capacity.len()];
    let mut remaining = size;
    for (done, &i) in order.iter().enumerate() {
        let left = capacity.len() - done;
        let share = remaining.div_ceil(left);
        out[i] = capacity[i].min(share);
        remaining -= out[i];
    }
    out
}

/// Deterministic templated corpus of `size` pairs with unique intents.
///
/// Every (operation, variables) combination appears at most once, so two
/// pairs are never paraphrases of each other. Operations are balanced as far
/// as their combinations allow and the pairs are shuffled, so any slice of
/// the corpus follows the same distribution. Clause order, synonym choice,
/// code variant and result name are drawn per pair. Sizes beyond the number
/// of distinct combinations yield every combination once.
pub fn synth_corpus(seed: u64, size: usize, task: Task) -> Vec<CorpusPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_vars = VARIABLES.len();
    let capacity: Vec<usize> = OPS.iter().map(|op| if op.uses_b() { n_vars * (n_vars - 1) } else { n_vars }).collect();
    let mut combos: Vec<(usize, &str, &str)> = Vec::with_capacity(size);
    for (op_idx, quota) in quotas(&capacity, size).into_iter().enumerate() {
        let mut all: Vec<(usize, &str, &str)> = Vec::with_capacity(capacity[op_idx]);
        for a in VARIABLES {
            if OPS[op_idx].uses_b() {
                all.extend(VARIABLES.iter().filter(|b| *b != a).map(|b| (op_idx, *a, *b)));
            } else {
                all.push((op_idx, a, ""));
            }
        }
        all.shuffle(&mut rng);
        combos.extend(all.into_iter().take(quota));
    }
    combos.shuffle(&mut rng);

    let mut seen_intent = HashSet::new();
    let mut out = Vec::with_capacity(combos.len());
    for (op_idx, a, b) in combos {
        let (intent, code) = render(&OPS[op_idx], a, b, &mut rng);
        if !seen_intent.insert(intent.clone()) {
            continue;
        }
        out.push(CorpusPair { id: format!("{}-{seed}-{:05}", task.as_str(), out.len()), task, intent, code });
    }
    out
}
