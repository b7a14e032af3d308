//! A small decoder-only transformer with down-projection hook points,
//! pretraining and decoding.

mod config;
mod decode;
mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, EOS};
pub use decode::{
    generate, greedy_decode, greedy_decode_steered, sample_topk, sample_topk_steered, top_k_indices,
    DecodeMode, Steering,
};
pub use model::{
    argmax, cross_entropy, Backward, BackwardScope, Block, ForwardCache, HookCapture, Substitution,
    ToyDecoder, Weights,
};
pub use train::{
    corpus_loss, greedy_exact_rate, next_token_accuracy, pair_loss_and_grad, pretrain_toy, pretrain_with,
    teacher_forcing, PretrainOptions, PretrainOutcome, TokenPair,
};

use crate::checkpoint;
use crate::error::{usage, Result};

/// Which token representation becomes a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyMode {
    /// Down-projection input at the final position.
    Last,
    /// Element-wise mean of the down-projection inputs over all positions.
    Mean,
}

/// Reduces a capture's down-projection inputs to a single key vector.
pub fn pool_key(capture: &HookCapture, mode: KeyMode) -> Result<Vec<f64>> {
    pool_rows(&capture.down_in, mode)
}

pub(crate) fn pool_rows(down_in: &crate::numcore::Matrix, mode: KeyMode) -> Result<Vec<f64>> {
    let n = down_in.rows();
    if n == 0 {
        return usage("cannot pool an empty capture");
    }
    Ok(match mode {
        KeyMode::Last => down_in.row(n - 1).to_vec(),
        KeyMode::Mean => {
            let mut acc = vec![0.0; down_in.cols()];
            for t in 0..n {
                for (a, x) in acc.iter_mut().zip(down_in.row(t)) {
                    *a += x;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n as f64);
            acc
        }
    })
}

/// Key of `tokens` at `layer` on the unedited forward pass.
pub fn prompt_key(model: &ToyDecoder, tokens: &[u32], layer: usize, mode: KeyMode) -> Result<Vec<f64>> {
    model.check_layer(layer)?;
    let cache = model.forward(tokens, None)?;
    pool_rows(cache.down_in(layer), mode)
}

impl ToyDecoder {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, "model", self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: ToyDecoder = checkpoint::load(path, "model")?;
        model.config.validate()?;
        Ok(model)
    }
}
