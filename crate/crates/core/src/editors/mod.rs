//! Weight-modifying baseline editors: constrained single-layer fine-tuning
//! and a rank-one closed-form edit of one down projection.

mod ftl;
mod rome;

pub use ftl::{ftl_edit, FtlConfig, FtlOutcome};
pub use rome::{
    estimate_key_covariance, rank_one_update, rome_edit, sample_key_prompts, KeyCovariance, RomeConfig, RomeOutcome,
};

use crate::benchdata::{EditInstance, Vocab};
use crate::error::{Error, Result};
use crate::toymodel::{cross_entropy, teacher_forcing, ToyDecoder};

/// Teacher-forced NLL of the instance's target given its input.
pub fn target_nll(model: &ToyDecoder, instance: &EditInstance) -> Result<f64> {
    let v = Vocab::standard();
    let pair = (v.prompt(&instance.x), v.target(&instance.y));
    let (seq, targets) = teacher_forcing(&pair);
    let cache = model.forward(&seq, None)?;
    let (loss, _) = cross_entropy(&cache.logits, &targets);
    if !loss.is_finite() {
        return Err(Error::Numeric { iteration: 0, message: format!("target NLL is {loss}") });
    }
    Ok(loss)
}
