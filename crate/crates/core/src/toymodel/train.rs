use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::decode::greedy_decode;
use super::model::{argmax, cross_entropy, BackwardScope, ToyDecoder, Weights};
use crate::error::{usage, Error, Result};
use crate::numcore::Adam;

/// A pre-tokenized (prompt, target) training pair. The target should end
/// with [`EOS`](super::EOS).
pub type TokenPair = (Vec<u32>, Vec<u32>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Also train next-token prediction inside the prompt, as plain language
    /// modelling over the whole sequence.
    pub prompt_loss: bool,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self { steps: 600, batch_size: 16, lr: 3e-3, weight_decay: 0.0, prompt_loss: false }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: ToyDecoder,
    /// Mean batch loss before each step, plus the final full-corpus loss.
    pub loss_curve: Vec<f64>,
}

/// Trains a fresh model on `corpus` for `steps` Adam steps.
pub fn pretrain_toy(corpus: &[TokenPair], cfg: ModelConfig, steps: usize) -> Result<ToyDecoder> {
    Ok(pretrain_with(corpus, cfg, PretrainOptions { steps, ..Default::default() })?.model)
}

pub fn pretrain_with(corpus: &[TokenPair], cfg: ModelConfig, opts: PretrainOptions) -> Result<PretrainOutcome> {
    if corpus.is_empty() {
        return usage("pretraining corpus is empty");
    }
    let mut model = ToyDecoder::new(cfg)?;
    for (p, t) in corpus {
        if p.is_empty() || t.is_empty() {
            return Err(Error::Data("pretraining pairs need a prompt and a target".into()));
        }
        model.check_tokens(&[p.as_slice(), t.as_slice()].concat())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed_cafe);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(opts.lr).with_weight_decay(opts.weight_decay);
    let mut curve = Vec::with_capacity(opts.steps + 1);
    let batch = opts.batch_size.max(1).min(corpus.len());
    for step in 0..opts.steps {
        let mut grads: Option<Weights> = None;
        let mut batch_loss = 0.0;
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (loss, g) = sequence_loss_and_grad(&model, &corpus[order[cursor]], opts.prompt_loss)?;
            cursor += 1;
            batch_loss += loss;
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
        let mut grads = grads.expect("batch is nonempty");
        grads.scale(1.0 / batch as f64);
        batch_loss /= batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Numeric { iteration: step, message: "pretraining loss is not finite".into() });
        }
        curve.push(batch_loss);
        // Linear decay to a tenth of the base rate.
        adam.lr = opts.lr * (1.0 - 0.9 * step as f64 / opts.steps as f64);
        adam.begin_step();
        let gt: Vec<&crate::numcore::Matrix> = grads.named().into_iter().map(|(_, t)| t).collect();
        for (slot, (p, g)) in model.weights.tensors_mut().into_iter().zip(gt).enumerate() {
            adam.update(slot, p.data_mut(), g.data());
        }
    }
    curve.push(corpus_loss(&model, corpus)?);
    Ok(PretrainOutcome { model, loss_curve: curve })
}

/// Teacher-forced loss over target tokens and its full parameter gradient.
pub fn pair_loss_and_grad(model: &ToyDecoder, pair: &TokenPair) -> Result<(f64, Weights)> {
    sequence_loss_and_grad(model, pair, false)
}

fn sequence_loss_and_grad(model: &ToyDecoder, pair: &TokenPair, prompt_loss: bool) -> Result<(f64, Weights)> {
    let (seq, mut targets) = teacher_forcing(pair);
    if prompt_loss {
        for t in 0..pair.0.len() - 1 {
            targets[t] = Some(seq[t + 1]);
        }
    }
    let cache = model.forward(&seq, None)?;
    let (loss, dlogits) = cross_entropy(&cache.logits, &targets);
    let bw = model.backward(&cache, &dlogits, BackwardScope { lowest_layer: 0, params: true });
    Ok((loss, bw.weights.expect("parameter gradients requested")))
}

/// Input sequence and per-position targets: every position from the last
/// prompt token onwards predicts the next target token.
pub fn teacher_forcing((prompt, target): &TokenPair) -> (Vec<u32>, Vec<Option<u32>>) {
    let mut seq = prompt.clone();
    seq.extend_from_slice(&target[..target.len() - 1]);
    let mut targets = vec![None; seq.len()];
    for (j, &y) in target.iter().enumerate() {
        targets[prompt.len() - 1 + j] = Some(y);
    }
    (seq, targets)
}

/// Mean teacher-forced target loss over the corpus.
pub fn corpus_loss(model: &ToyDecoder, corpus: &[TokenPair]) -> Result<f64> {
    let mut total = 0.0;
    for pair in corpus {
        let (seq, targets) = teacher_forcing(pair);
        total += cross_entropy(&model.logits(&seq)?, &targets).0;
    }
    Ok(total / corpus.len() as f64)
}

/// Fraction of target tokens predicted correctly under teacher forcing.
pub fn next_token_accuracy(model: &ToyDecoder, corpus: &[TokenPair]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for pair in corpus {
        let (seq, targets) = teacher_forcing(pair);
        let logits = model.logits(&seq)?;
        for (t, y) in targets.iter().enumerate() {
            if let Some(y) = y {
                total += 1;
                hit += usize::from(argmax(logits.row(t)) as u32 == *y);
            }
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// Fraction of pairs whose greedy continuation reproduces the target exactly.
pub fn greedy_exact_rate(model: &ToyDecoder, corpus: &[TokenPair]) -> Result<f64> {
    let mut hit = 0;
    for (prompt, target) in corpus {
        let out = greedy_decode(model, prompt, target.len())?;
        hit += usize::from(out == target[..target.len() - 1]);
    }
    Ok(hit as f64 / corpus.len().max(1) as f64)
}
