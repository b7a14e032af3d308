use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchdata::{EditInstance, Vocab};
use crate::error::{usage, Error, Result};
use crate::grace::{optimize_value, GraceOptions, ValueOptions};
use crate::numcore::{cholesky, cholesky_solve, dot, Matrix};
use crate::toymodel::{prompt_key, KeyMode, TokenPair, ToyDecoder};

/// Second-moment estimate of down-projection inputs, used as the metric for
/// the rank-one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyCovariance {
    pub c: Matrix,
    pub sample_count: usize,
    pub ridge: f64,
}

/// `C = (1/N)·Σ k kᵀ + ridge·I` over last-token keys of `prompts` at `layer`.
pub fn estimate_key_covariance(
    model: &ToyDecoder,
    prompts: &[Vec<u32>],
    layer: usize,
    ridge: f64,
) -> Result<KeyCovariance> {
    if prompts.is_empty() {
        return usage("covariance needs at least one prompt");
    }
    if ridge.is_nan() || ridge <= 0.0 {
        return usage(format!("ridge must be positive, got {ridge}"));
    }
    let keys = prompts
        .iter()
        .map(|p| prompt_key(model, p, layer, KeyMode::Last))
        .collect::<Result<Vec<_>>>()?;
    Ok(covariance_of(&keys, ridge))
}

/// Draws `n` prompts for covariance estimation: each is a prefix of a
/// corpus sequence (prompt followed by target) cut at a random position, so
/// the last-token keys cover every position type the edited layer sees.
pub fn sample_key_prompts(sequences: &[TokenPair], n: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sequences
        .iter()
        .take(n)
        .map(|(prompt, target)| {
            let seq = [prompt.as_slice(), target.as_slice()].concat();
            let cut = if seq.len() > 1 { rng.gen_range(1..seq.len()) } else { seq.len() };
            seq[..cut].to_vec()
        })
        .collect()
}

fn covariance_of(keys: &[Vec<f64>], ridge: f64) -> KeyCovariance {
    let d = keys[0].len();
    let k = Matrix::from_fn(keys.len(), d, |i, j| keys[i][j]);
    let mut c = k.t_matmul(&k);
    let n = keys.len() as f64;
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] / n + if i == j { ridge } else { 0.0 };
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    KeyCovariance { c, sample_count: keys.len(), ridge }
}

/// Rank-one update of a down projection stored as `d_ffn × d_model` (keys
/// multiply from the left), so that `k·Ŵ = v` and the change is
/// `(C⁻¹k)(v − k·W)ᵀ / (kᵀC⁻¹k)`.
pub fn rank_one_update(w_down: &Matrix, key: &[f64], value: &[f64], cov: &KeyCovariance) -> Result<Matrix> {
    if key.len() != w_down.rows() || value.len() != w_down.cols() || cov.c.rows() != key.len() {
        return usage("rank-one update shapes do not agree");
    }
    let l = cholesky(&cov.c)?;
    let u = cholesky_solve(&l, key);
    let denom = dot(key, &u);
    if !(denom >= 1e-12) {
        return Err(Error::Singular(format!("kᵀC⁻¹k = {denom:e} is too small")));
    }
    let current = w_down.vec_matmul(key);
    let residual: Vec<f64> = value.iter().zip(&current).map(|(v, c)| v - c).collect();
    let mut out = w_down.clone();
    if residual.iter().all(|r| *r == 0.0) {
        return Ok(out);
    }
    for (i, ui) in u.iter().enumerate() {
        let s = ui / denom;
        for (w, r) in out.row_mut(i).iter_mut().zip(&residual) {
            *w += s * r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RomeConfig {
    pub layer: usize,
    pub value: ValueOptions,
}

impl RomeConfig {
    pub fn for_model(model: &ToyDecoder) -> Self {
        Self { layer: model.config.rome_layer(), value: GraceOptions::default().value.with_last_position_only() }
    }
}

#[derive(Debug, Clone)]
pub struct RomeOutcome {
    pub model: ToyDecoder,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
}

/// Finds the output `v*` the last prompt position should produce at the
/// layer's down projection, then writes `k* ↦ v*` into the weights with a
/// rank-one update.
pub fn rome_edit(model: &ToyDecoder, instance: &EditInstance, cov: &KeyCovariance, cfg: RomeConfig) -> Result<RomeOutcome> {
    let mut opts = cfg.value;
    opts.last_position_only = true;
    let v = Vocab::standard();
    let prompt = v.prompt(&instance.x);
    let key = prompt_key(model, &prompt, cfg.layer, KeyMode::Last)?;
    let found = optimize_value(model, cfg.layer, &prompt, &v.target(&instance.y), opts)?;
    let mut edited = model.clone();
    let w = &mut edited.weights.blocks[cfg.layer].w_down;
    *w = rank_one_update(w, &key, &found.value, cov)?;
    Ok(RomeOutcome { model: edited, key, value: found.value })
}
