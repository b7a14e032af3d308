use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::numcore::Adam;
use crate::toymodel::{argmax, cross_entropy, teacher_forcing, BackwardScope, Substitution, ToyDecoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueOptions {
    pub lr: f64,
    pub max_iters: usize,
    /// Substitute only at the last prompt position instead of from there
    /// through the end of the sequence.
    pub last_position_only: bool,
    /// Early exit needs the target decodable and the loss at or below this.
    pub exit_loss: f64,
}

impl Default for ValueOptions {
    fn default() -> Self {
        Self { lr: 1.0, max_iters: 30, last_position_only: false, exit_loss: f64::INFINITY }
    }
}

impl ValueOptions {
    pub fn with_last_position_only(self) -> Self {
        Self { last_position_only: true, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueOutcome {
    pub value: Vec<f64>,
    /// Teacher-forced target NLL with the returned value substituted.
    pub loss: f64,
    /// NLL of the pass-through value the search started from.
    pub initial_loss: f64,
    pub iterations: usize,
    /// Whether every target token is the argmax under teacher forcing.
    pub decodable: bool,
}

/// Searches for a down-projection output at `layer` that makes the model
/// produce `target` after `prompt`, starting from the unedited output at the
/// last prompt position. Stops at the first decodable iterate whose loss is
/// at most `exit_loss`; otherwise returns the lowest-loss decodable iterate,
/// or the lowest-loss one overall if none decodes.
pub fn optimize_value(
    model: &ToyDecoder,
    layer: usize,
    prompt: &[u32],
    target: &[u32],
    opts: ValueOptions,
) -> Result<ValueOutcome> {
    model.check_layer(layer)?;
    if prompt.is_empty() || target.is_empty() {
        return usage("value search needs a non-empty prompt and target");
    }
    let pair = (prompt.to_vec(), target.to_vec());
    let (seq, targets) = teacher_forcing(&pair);
    let start = prompt.len() - 1;
    let end = opts.last_position_only.then_some(prompt.len());

    let base = model.forward(&seq, None)?;
    let mut value = base.capture(layer).down_out.row(start).to_vec();
    let mut adam = Adam::new(opts.lr);
    let mut best: Option<ValueOutcome> = None;
    let mut initial_loss = f64::NAN;
    for iter in 0..=opts.max_iters {
        let sub = Substitution { layer, start, end, value: &value };
        let cache = model.forward(&seq, Some(&sub))?;
        let (loss, dlogits) = cross_entropy(&cache.logits, &targets);
        if !loss.is_finite() {
            return Err(Error::Numeric { iteration: iter, message: format!("value loss is {loss}") });
        }
        if iter == 0 {
            initial_loss = loss;
        }
        let decodable = targets
            .iter()
            .enumerate()
            .all(|(t, y)| y.is_none_or(|y| argmax(cache.logits.row(t)) == y as usize));
        let current = ValueOutcome { value: value.clone(), loss, initial_loss, iterations: iter, decodable };
        if decodable && loss <= opts.exit_loss {
            return Ok(current);
        }
        // a decodable iterate beats any non-decodable one
        if best.as_ref().is_none_or(|b| (decodable, -loss) > (b.decodable, -b.loss)) {
            best = Some(current);
        }
        if iter == opts.max_iters {
            break;
        }
        let back = model.backward(&cache, &dlogits, BackwardScope { lowest_layer: layer, params: false });
        let d_out = back.d_down_out[layer].as_ref().expect("edit layer is within backward scope");
        let mut grad = vec![0.0; value.len()];
        for t in (start..seq.len()).filter(|&t| end.is_none_or(|e| t < e)) {
            for (g, x) in grad.iter_mut().zip(d_out.row(t)) {
                *g += x;
            }
        }
        adam.begin_step();
        adam.update(0, &mut value, &grad);
    }
    Ok(best.expect("at least one iterate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodel::{greedy_decode, greedy_decode_steered, ModelConfig, Steering};

    fn tiny() -> ToyDecoder {
        ToyDecoder::new(ModelConfig {
            vocab_size: 24,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ffn: 32,
            max_seq_len: 16,
            rng_seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn loss_never_increases_and_steers_decode() {
        let m = tiny();
        let prompt = [3, 4, 5, 2];
        let target = [7, 9, 0];
        let out = optimize_value(&m, 1, &prompt, &target, ValueOptions { max_iters: 200, ..Default::default() })
            .unwrap();
        assert!(out.loss <= out.initial_loss);
        assert!(out.decodable, "{out:?}");
        let steered = greedy_decode_steered(&m, &prompt, 8, Some(Steering { layer: 1, value: &out.value })).unwrap();
        assert_eq!(steered, vec![7, 9]);
        assert_ne!(greedy_decode(&m, &prompt, 8).unwrap(), vec![7, 9]);
    }

    #[test]
    fn zero_iterations_returns_pass_through_value() {
        let m = tiny();
        let prompt = [3, 4, 2];
        let out = optimize_value(&m, 0, &prompt, &[5, 0], ValueOptions { max_iters: 0, ..Default::default() })
            .unwrap();
        let cache = m.forward(&prompt, None).unwrap();
        assert_eq!(out.value, cache.capture(0).down_out.row(2).to_vec());
        assert_eq!(out.loss, out.initial_loss);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = tiny();
        assert!(optimize_value(&m, 5, &[1, 2], &[3], ValueOptions::default()).is_err());
        assert!(optimize_value(&m, 0, &[], &[3], ValueOptions::default()).is_err());
    }

    #[test]
    fn non_finite_loss_reports_iteration() {
        let mut m = tiny();
        m.weights.head.data_mut()[0] = f64::NAN;
        match optimize_value(&m, 1, &[3, 4, 2], &[7, 9, 0], ValueOptions::default()) {
            Err(Error::Numeric { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
