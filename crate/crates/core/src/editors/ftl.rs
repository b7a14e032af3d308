use serde::{Deserialize, Serialize};

use crate::benchdata::{EditInstance, Vocab};
use crate::error::{usage, Error, Result};
use crate::numcore::{linf_project, sgd_step, Matrix};
use crate::toymodel::{cross_entropy, teacher_forcing, BackwardScope, ToyDecoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtlConfig {
    pub edit_layer: usize,
    pub lr: f64,
    pub max_iters: usize,
    /// Bound on every entry of the cumulative weight change.
    pub delta: f64,
}

impl FtlConfig {
    pub fn for_model(model: &ToyDecoder) -> Self {
        Self { edit_layer: model.config.ftl_layer(), lr: 5e-4, max_iters: 40, delta: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct FtlOutcome {
    pub model: ToyDecoder,
    pub initial_loss: f64,
    pub loss: f64,
    /// Iteration of the kept weights; 0 means the original weights.
    pub best_iter: usize,
}

/// Moves `w` toward `base` one ulp at a time until `|w − base| ≤ bound`
/// holds in floating point.
fn pull_within(base: f64, w: f64, bound: f64) -> f64 {
    let mut w = w;
    while (w - base).abs() > bound {
        w = if w > base { w.next_down() } else { w.next_up() };
    }
    w
}

fn constrained(original: &Matrix, candidate: &Matrix, bound: f64) -> Result<Matrix> {
    let mut delta = candidate.clone();
    for (d, o) in delta.data_mut().iter_mut().zip(original.data()) {
        *d -= o;
    }
    let delta = linf_project(&delta, bound)?;
    let mut out = original.clone();
    for ((w, d), o) in out.data_mut().iter_mut().zip(delta.data()).zip(original.data()) {
        *w = pull_within(*o, o + d, bound);
    }
    Ok(out)
}

/// Gradient descent on the edit layer's down projection only, keeping the
/// cumulative change inside an L∞ ball of radius `delta` and returning the
/// lowest-loss iterate.
pub fn ftl_edit(model: &ToyDecoder, instance: &EditInstance, cfg: FtlConfig) -> Result<FtlOutcome> {
    model.check_layer(cfg.edit_layer)?;
    if cfg.delta.is_nan() || cfg.delta <= 0.0 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return usage(format!("FT-L needs positive lr and delta, got {} and {}", cfg.lr, cfg.delta));
    }
    let v = Vocab::standard();
    let pair = (v.prompt(&instance.x), v.target(&instance.y));
    let (seq, targets) = teacher_forcing(&pair);
    let layer = cfg.edit_layer;
    let original = model.weights.blocks[layer].w_down.clone();
    let mut work = model.clone();
    let mut best: Option<(f64, usize, Matrix)> = None;
    let mut initial_loss = f64::NAN;
    for iter in 0..=cfg.max_iters {
        let cache = work.forward(&seq, None)?;
        let (loss, dlogits) = cross_entropy(&cache.logits, &targets);
        if !loss.is_finite() {
            return Err(Error::Numeric { iteration: iter, message: format!("FT-L loss is {loss}") });
        }
        if iter == 0 {
            initial_loss = loss;
        }
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, iter, work.weights.blocks[layer].w_down.clone()));
        }
        if iter == cfg.max_iters {
            break;
        }
        let back = work.backward(&cache, &dlogits, BackwardScope { lowest_layer: layer, params: true });
        let grads = back.weights.expect("parameter gradients requested");
        let current = &work.weights.blocks[layer].w_down;
        let stepped = sgd_step(current, &grads.blocks[layer].w_down, cfg.lr, 0.0)?;
        work.weights.blocks[layer].w_down = constrained(&original, &stepped, cfg.delta)?;
    }
    let (loss, best_iter, w) = best.expect("at least one iterate");
    work.weights.blocks[layer].w_down = w;
    Ok(FtlOutcome { model: work, initial_loss, loss, best_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pull_within_respects_bound_exactly() {
        let base = 0.1;
        let bound = 1e-4;
        for w in [base + bound, base - bound, 0.3, -7.0, base] {
            let got = pull_within(base, base + (w - base).clamp(-bound, bound), bound);
            assert!((got - base).abs() <= bound);
        }
    }

    #[test]
    fn constrained_clamps_large_moves() {
        let o = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let c = Matrix::from_vec(1, 3, vec![3.0, -2.00005, -9.0]).unwrap();
        let got = constrained(&o, &c, 1e-4).unwrap();
        for (g, x) in got.data().iter().zip(o.data()) {
            assert!((g - x).abs() <= 1e-4);
        }
        assert!((got[(0, 1)] - -2.00005).abs() < 1e-15);
    }
}
