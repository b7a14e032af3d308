use crate::benchdata::{build_benchmark, synth_corpus, BuildOptions, CorpusPair, EditInstance, Task, Vocab};
use crate::error::{usage, Result};
use crate::grace::{fit_encoder, EncoderTraining, TrainedEncoder};
use crate::toymodel::{pretrain_with, KeyMode, ModelConfig, PretrainOptions, TokenPair, ToyDecoder};

/// Recipe for a complete synthetic setup. The corpus is laid out as
/// `[eval targets | encoder targets | pretraining pool]`; the model only
/// ever sees the pool, and every neighbor is drawn from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabOptions {
    pub seed: u64,
    pub task: Task,
    pub corpus_size: usize,
    pub eval_targets: usize,
    pub encoder_targets: usize,
    pub model: ModelConfig,
    pub pretrain: PretrainOptions,
    pub neighbor_tokens: usize,
    /// Fraction of encoder instances held out for checkpoint selection.
    pub encoder_holdout: f64,
}

impl Default for LabOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            task: Task::Nl2Pl,
            corpus_size: 7000,
            eval_targets: 50,
            encoder_targets: 2000,
            model: ModelConfig { vocab_size: Vocab::standard().len().max(256), rng_seed: 1, ..ModelConfig::default() },
            pretrain: PretrainOptions { steps: 2000, prompt_loss: true, ..PretrainOptions::default() },
            neighbor_tokens: 16,
            encoder_holdout: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lab {
    pub options: LabOptions,
    pub corpus: Vec<CorpusPair>,
    pub model: ToyDecoder,
    /// Evaluation benchmark with cached neighbor outputs.
    pub eval: Vec<EditInstance>,
    /// Encoder-training benchmark; neighbor outputs are not decoded.
    pub train: Vec<EditInstance>,
}

impl Lab {
    pub fn pool(&self) -> &[CorpusPair] {
        &self.corpus[self.options.eval_targets + self.options.encoder_targets..]
    }

    pub fn train_encoder(&self, layer: usize, mode: KeyMode, hyper: EncoderTraining) -> Result<TrainedEncoder> {
        fit_encoder(&self.model, &self.train, layer, mode, self.options.encoder_holdout, hyper)
    }
}

/// Generates the corpus, pretrains the model on the pool and builds both
/// benchmarks.
pub fn build_lab(opts: LabOptions) -> Result<Lab> {
    let split = opts.eval_targets + opts.encoder_targets;
    if opts.corpus_size < split + 5 {
        return usage(format!("corpus of {} leaves no neighbor pool after {split} targets", opts.corpus_size));
    }
    let corpus = synth_corpus(opts.seed, opts.corpus_size, opts.task);
    let pool = &corpus[split..];
    let train_pairs: Vec<TokenPair> = pool.iter().map(CorpusPair::tokens).collect();
    let model = pretrain_with(&train_pairs, opts.model, opts.pretrain)?.model;
    let build = BuildOptions { embed_layer: model.config.grace_layer(), neighbor_tokens: opts.neighbor_tokens };
    let with_pool = |targets: &[CorpusPair]| [targets, pool].concat();
    let eval = build_benchmark(&model, &with_pool(&corpus[..opts.eval_targets]), opts.eval_targets, build)?;
    let train = build_benchmark(
        &model,
        &with_pool(&corpus[opts.eval_targets..split]),
        opts.encoder_targets,
        BuildOptions { neighbor_tokens: 0, ..build },
    )?;
    Ok(Lab { options: opts, corpus, model, eval, train })
}
