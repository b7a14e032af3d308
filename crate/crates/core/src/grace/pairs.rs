use super::encoder::{train_encoder, EncoderTraining, KeyPair, TrainedEncoder};
use super::margin_for;
use crate::benchdata::{EditInstance, Vocab};
use crate::error::{usage, Result};
use crate::toymodel::{prompt_key, KeyMode, ToyDecoder};

/// Contrastive pairs from a benchmark: each input is a positive with its
/// first rewrite and a negative with every neighbor. With `augment`, the
/// rewrite is also paired negatively with every neighbor.
pub fn encoder_pairs(
    model: &ToyDecoder,
    instances: &[EditInstance],
    layer: usize,
    mode: KeyMode,
    augment: bool,
) -> Result<Vec<KeyPair>> {
    let v = Vocab::standard();
    let key = |text: &str| prompt_key(model, &v.prompt(text), layer, mode);
    let mut out = Vec::new();
    for inst in instances {
        let Some(rewrite) = inst.rewrites.first() else {
            return usage(format!("{} has no rewrite", inst.id));
        };
        let oi = key(&inst.x)?;
        let gri = key(rewrite)?;
        out.push(KeyPair { anchor: oi.clone(), other: gri.clone(), y: 1 });
        for n in &inst.neighbors {
            let sri = key(&n.x_u)?;
            if augment {
                out.push(KeyPair { anchor: gri.clone(), other: sri.clone(), y: 0 });
            }
            out.push(KeyPair { anchor: oi.clone(), other: sri, y: 0 });
        }
    }
    Ok(out)
}

/// Trains a key encoder on a benchmark's pairs, holding out the first
/// `holdout_fraction` of instances for checkpoint selection.
pub fn fit_encoder(
    model: &ToyDecoder,
    instances: &[EditInstance],
    layer: usize,
    mode: KeyMode,
    holdout_fraction: f64,
    hyper: EncoderTraining,
) -> Result<TrainedEncoder> {
    if instances.is_empty() {
        return usage("encoder training needs at least one instance");
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return usage(format!("holdout fraction must be in [0, 1), got {holdout_fraction}"));
    }
    let n_hold = (instances.len() as f64 * holdout_fraction).floor() as usize;
    let (hold, train) = instances.split_at(n_hold);
    let task = instances[0].task;
    let train_pairs = encoder_pairs(model, train, layer, mode, true)?;
    let hold_pairs = encoder_pairs(model, hold, layer, mode, true)?;
    train_encoder(&train_pairs, &hold_pairs, margin_for(task), hyper)
}
