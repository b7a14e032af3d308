#![allow(dead_code)]

use codedit::benchdata::{build_benchmark, synth_corpus, BuildOptions, CorpusPair, EditInstance, Task, Vocab};
use codedit::toymodel::{pretrain_with, ModelConfig, PretrainOptions, TokenPair, ToyDecoder};

pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: Vocab::standard().len().max(256),
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ffn: 32,
        max_seq_len: 64,
        rng_seed: seed,
    }
}

/// A briefly pretrained small model plus a benchmark of `n` instances built
/// against it.
pub fn small_setup(n: usize) -> (ToyDecoder, Vec<CorpusPair>, Vec<EditInstance>) {
    let corpus = synth_corpus(3, 200, Task::Nl2Pl);
    let train: Vec<TokenPair> = corpus[n..].iter().map(CorpusPair::tokens).collect();
    let opts = PretrainOptions { steps: 60, prompt_loss: true, ..Default::default() };
    let model = pretrain_with(&train, small_config(5), opts).unwrap().model;
    let build = BuildOptions { embed_layer: 1, neighbor_tokens: 8 };
    let bench = build_benchmark(&model, &corpus, n, build).unwrap();
    (model, corpus, bench)
}
