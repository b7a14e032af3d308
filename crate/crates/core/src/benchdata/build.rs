use std::collections::HashMap;

use super::lexicon::Vocab;
use super::rewrite::make_rewrite;
use super::{CorpusPair, EditInstance, Neighbor, NEIGHBORS_PER_INSTANCE};
use crate::error::{usage, Result};
use crate::numcore::{pairwise_metric, MetricKind};
use crate::toymodel::{greedy_decode, prompt_key, KeyMode, ToyDecoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Layer whose mean-pooled down-projection input embeds inputs for
    /// neighbor matching.
    pub embed_layer: usize,
    /// Greedy tokens generated for the cached neighbor outputs; 0 skips
    /// decoding and leaves `y_orig` empty.
    pub neighbor_tokens: usize,
}

impl BuildOptions {
    pub fn for_model(model: &ToyDecoder) -> Self {
        Self { embed_layer: model.config.grace_layer(), neighbor_tokens: 16 }
    }
}

/// Splits a corpus into the targeted pool (the first `n_targets` pairs) and
/// the non-targeted pool (the rest).
pub fn split_pools(corpus: &[CorpusPair], n_targets: usize) -> (&[CorpusPair], &[CorpusPair]) {
    corpus.split_at(n_targets.min(corpus.len()))
}

/// Builds edit instances: each targeted pair gets one rewrite and its five
/// most cosine-similar inputs from the non-targeted pool, with the unedited
/// model's greedy outputs cached.
pub fn build_benchmark(
    model: &ToyDecoder,
    corpus: &[CorpusPair],
    n_targets: usize,
    opts: BuildOptions,
) -> Result<Vec<EditInstance>> {
    if corpus.len() < n_targets + NEIGHBORS_PER_INSTANCE {
        return usage(format!(
            "corpus of {} pairs cannot supply {n_targets} targets and {NEIGHBORS_PER_INSTANCE} neighbors",
            corpus.len()
        ));
    }
    let vocab = Vocab::standard();
    let (targets, pool) = split_pools(corpus, n_targets);
    let embed = |text: &str| prompt_key(model, &vocab.prompt(text), opts.embed_layer, KeyMode::Mean);
    let pool_keys = pool.iter().map(|p| embed(p.input())).collect::<Result<Vec<_>>>()?;
    let mut cached: HashMap<usize, String> = HashMap::new();
    let mut out = Vec::with_capacity(targets.len());
    for pair in targets {
        let key = embed(pair.input())?;
        let sims = pool_keys
            .iter()
            .map(|k| pairwise_metric(&key, k, MetricKind::Cosine))
            .collect::<Result<Vec<_>>>()?;
        let mut neighbors = Vec::with_capacity(NEIGHBORS_PER_INSTANCE);
        for idx in top_similar(&sims, NEIGHBORS_PER_INSTANCE) {
            let x_u = pool[idx].input().to_string();
            let y_orig = match cached.get(&idx) {
                Some(y) => y.clone(),
                None if opts.neighbor_tokens == 0 => String::new(),
                None => {
                    let ids = greedy_decode(model, &vocab.prompt(&x_u), opts.neighbor_tokens)?;
                    let y = vocab.decode(&ids);
                    cached.insert(idx, y.clone());
                    y
                }
            };
            neighbors.push(Neighbor { x_u, y_orig });
        }
        out.push(EditInstance {
            id: pair.id.clone(),
            task: pair.task,
            x: pair.input().to_string(),
            y: pair.output().to_string(),
            rewrites: vec![make_rewrite(pair)],
            neighbors,
        });
    }
    Ok(out)
}

/// Indices of the `k` largest similarities, most similar first; ties go to
/// the lower index.
pub fn top_similar(sims: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
