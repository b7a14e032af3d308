//! Rule-based, target-preserving rewrites of inputs.
//!
//! Intents are paraphrased by swapping clause order and replacing every word
//! that has a listed synonym with its partner. Code is rewritten by renaming
//! identifiers the description does not mention.

use std::collections::HashMap;

use super::lexicon::{is_identifier, FRESH_NAMES, SYNONYMS};
use super::synth::{assemble, ClauseOrder};
use super::{CorpusPair, Task};

/// Rewrite of the pair's input (the intent for nl2pl, the code for pl2nl).
pub fn make_rewrite(pair: &CorpusPair) -> String {
    match pair.task {
        Task::Nl2Pl => paraphrase(&pair.intent),
        Task::Pl2Nl => {
            let mentioned: Vec<&str> = pair.intent.split_whitespace().collect();
            let map = fresh_name_map(&pair.code, |w| !mentioned.contains(&w));
            if map.is_empty() {
                wrap(&pair.code)
            } else {
                rename_identifiers(&pair.code, &map)
            }
        }
    }
}

/// Paraphrase by clause reordering and synonym substitution, falling back to
/// `"please {intent}"` when no rule applies.
pub fn paraphrase(intent: &str) -> String {
    let reordered = reorder(intent).unwrap_or_else(|| intent.to_string());
    let swapped = swap_synonyms(&reordered);
    if swapped == intent {
        wrap(intent)
    } else {
        swapped
    }
}

fn wrap(text: &str) -> String {
    format!("please {text}")
}

pub fn swap_synonyms(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            SYNONYMS
                .iter()
                .find_map(|(x, y)| {
                    if *x == w {
                        Some(*y)
                    } else if *y == w {
                        Some(*x)
                    } else {
                        None
                    }
                })
                .unwrap_or(w)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Toggles between the direct and fronted clause orders. Returns `None` when
/// the text does not have an object phrase of the form `the <noun> <identifier>`.
fn reorder(intent: &str) -> Option<String> {
    let words: Vec<&str> = intent.split_whitespace().collect();
    if words.first() == Some(&"given") {
        // given O O O , V.. it T..
        let comma = words.iter().position(|w| *w == ",")?;
        let it = comma + words[comma..].iter().position(|w| *w == "it")?;
        let object = words[1..comma].join(" ");
        let verb = words[comma + 1..it].join(" ");
        let tail = words[it + 1..].join(" ");
        return Some(assemble(&verb, &object, &tail, ClauseOrder::Direct));
    }
    let start = (0..words.len().saturating_sub(2))
        .find(|&i| words[i] == "the" && is_identifier(words[i + 2]))?;
    let verb = words[..start].join(" ");
    let object = words[start..start + 3].join(" ");
    let tail = words[start + 3..].join(" ");
    if verb.is_empty() {
        return None;
    }
    Some(assemble(&verb, &object, &tail, ClauseOrder::Fronted))
}

/// Maps identifiers selected by `keep`, in order of first appearance, to fresh names.
pub fn fresh_name_map(code: &str, keep: impl Fn(&str) -> bool) -> HashMap<String, String> {
    let mut map = HashMap::new();
    for w in code.split_whitespace() {
        if is_identifier(w) && keep(w) && !map.contains_key(w) && map.len() < FRESH_NAMES.len() {
            let fresh = FRESH_NAMES[map.len()];
            map.insert(w.to_string(), fresh.to_string());
        }
    }
    map
}

/// Consistently renames whitespace-separated identifier tokens.
pub fn rename_identifiers(code: &str, map: &HashMap<String, String>) -> String {
    code.split_whitespace()
        .map(|w| map.get(w).map(String::as_str).unwrap_or(w))
        .collect::<Vec<_>>()
        .join(" ")
}
