//! Two-layer key encoder `q* = W2 · relu(W1 · q)` trained with a margin
//! contrastive loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::numcore::{Adam, Matrix};

/// Encoder output width used unless configured otherwise.
pub const DEFAULT_OUTPUT_DIM: usize = 256;
/// Margin for natural-language inputs.
pub const NL2PL_MARGIN: f64 = 1.3;
/// Margin for code inputs.
pub const PL2NL_MARGIN: f64 = 2.5;

/// Bias-free two-layer MLP. `w1` is `hidden × d_in` with `hidden = d_in / 4`;
/// `w2` is `d_out × hidden`. Both act on column vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderWeights {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl EncoderWeights {
    pub fn new(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        let hidden = d_in / 4;
        if hidden == 0 || d_out == 0 {
            return usage(format!("encoder needs d_in >= 4 and d_out >= 1, got {d_in} -> {d_out}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| {
            let dist = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
            Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
        };
        let w1 = init(hidden, d_in);
        let w2 = init(d_out, hidden);
        Ok(Self { w1, w2 })
    }

    pub fn d_in(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w2.rows()
    }

    /// Encodes each row of `x`; returns pre-activations, hidden units and outputs.
    fn forward_rows(&self, x: &Matrix) -> (Matrix, Matrix, Matrix) {
        let pre = x.matmul_t(&self.w1);
        let mut hid = pre.clone();
        hid.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let out = hid.matmul_t(&self.w2);
        (pre, hid, out)
    }

    /// Flattened parameters, `w1` then `w2`.
    pub fn to_flat(&self) -> Vec<f64> {
        [self.w1.data(), self.w2.data()].concat()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Self {
        let n1 = self.w1.data().len();
        let mut out = self.clone();
        out.w1.data_mut().copy_from_slice(&flat[..n1]);
        out.w2.data_mut().copy_from_slice(&flat[n1..]);
        out
    }
}

/// Encodes a pooled key into the matching space.
pub fn encode_key(enc: &EncoderWeights, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != enc.d_in() {
        return usage(format!("key width {} does not match encoder input {}", q.len(), enc.d_in()));
    }
    let hid: Vec<f64> = enc.w1.matvec(q).into_iter().map(|x| x.max(0.0)).collect();
    Ok(enc.w2.matvec(&hid))
}

/// A labelled key pair: `y = 1` for a semantically identical pair, `0` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPair {
    pub anchor: Vec<f64>,
    pub other: Vec<f64>,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub pairs: Vec<KeyPair>,
    pub margin: f64,
}

/// Gradients of the contrastive loss with respect to both encoder matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w1: Matrix,
    pub w2: Matrix,
}

/// `(1/N) Σ [ y·d² + (1−y)·max(margin − d, 0)² ]` with `d` the Euclidean
/// distance between the encoded keys of each pair.
pub fn contrastive_loss(enc: &EncoderWeights, batch: &ContrastiveBatch) -> Result<(f64, EncoderGrads)> {
    contrastive_loss_of(enc, &batch.pairs, batch.margin)
}

fn contrastive_loss_of(enc: &EncoderWeights, pairs: &[KeyPair], margin: f64) -> Result<(f64, EncoderGrads)> {
    if pairs.is_empty() {
        return usage("contrastive batch is empty");
    }
    if margin.is_nan() || margin <= 0.0 {
        return usage(format!("margin must be positive, got {margin}"));
    }
    let d_in = enc.d_in();
    if pairs.iter().any(|p| p.anchor.len() != d_in || p.other.len() != d_in) {
        return usage("pair key width does not match the encoder input");
    }
    let n = pairs.len();
    let xa = Matrix::from_fn(n, d_in, |i, j| pairs[i].anchor[j]);
    let xo = Matrix::from_fn(n, d_in, |i, j| pairs[i].other[j]);
    let (pre_a, hid_a, out_a) = enc.forward_rows(&xa);
    let (pre_o, hid_o, out_o) = enc.forward_rows(&xo);

    // g = dL/d(out_a) = -dL/d(out_o), one row per pair
    let mut g = out_a;
    g.sub_assign(&out_o);
    let mut loss = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let row = g.row_mut(i);
        let d = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = if p.y == 1 {
            loss += d * d;
            2.0
        } else if d < margin {
            loss += (margin - d) * (margin - d);
            if d > 0.0 {
                -2.0 * (margin - d) / d
            } else {
                0.0
            }
        } else {
            0.0
        };
        row.iter_mut().for_each(|x| *x *= c / n as f64);
    }
    let mut hid_diff = hid_a;
    hid_diff.sub_assign(&hid_o);
    let g2 = g.t_matmul(&hid_diff);
    let dh = g.matmul(&enc.w2);
    let mut dh_a = dh.clone();
    let mut dh_o = dh;
    dh_o.scale(-1.0);
    relu_mask(&mut dh_a, &pre_a);
    relu_mask(&mut dh_o, &pre_o);
    let mut g1 = dh_a.t_matmul(&xa);
    g1.add_t_matmul(&dh_o, &xo);
    Ok((loss / n as f64, EncoderGrads { w1: g1, w2: g2 }))
}

fn relu_mask(grad: &mut Matrix, pre: &Matrix) {
    for (g, p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderTraining {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl Default for EncoderTraining {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 3e-3,
            weight_decay: 1e-4,
            epochs: 100,
            patience: 10,
            output_dim: DEFAULT_OUTPUT_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub weights: EncoderWeights,
    /// Epoch of the returned checkpoint; 0 is the initialization.
    pub best_epoch: usize,
    /// Full training-set loss of the initialization and of the returned checkpoint.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    /// Selection loss after each epoch, starting with the initialization.
    pub holdout_loss: Vec<f64>,
}

/// Trains the encoder with AdamW on shuffled mini-batches, keeping the
/// checkpoint with the lowest held-out loss and stopping after `patience`
/// epochs without improvement. An empty `holdout` selects on training loss.
pub fn train_encoder(
    train: &[KeyPair],
    holdout: &[KeyPair],
    margin: f64,
    hyper: EncoderTraining,
) -> Result<TrainedEncoder> {
    let has_pos = train.iter().any(|p| p.y == 1);
    let has_neg = train.iter().any(|p| p.y == 0);
    if !(has_pos && has_neg) {
        return usage("encoder training data needs both positive and negative pairs");
    }
    let d_in = train[0].anchor.len();
    let mut enc = EncoderWeights::new(d_in, hyper.output_dim, hyper.seed)?;
    let select_on = if holdout.is_empty() { train } else { holdout };
    let initial_train_loss = contrastive_loss_of(&enc, train, margin)?.0;
    let mut hold_curve = vec![contrastive_loss_of(&enc, select_on, margin)?.0];
    let mut best = (hold_curve[0], 0usize, enc.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0xc0de);
    let mut adam = Adam::new(hyper.lr).with_weight_decay(hyper.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch: Vec<KeyPair> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, g) = contrastive_loss_of(&enc, &batch, margin)?;
            if !loss.is_finite() {
                return Err(Error::Numeric { iteration: epoch, message: "contrastive loss is not finite".into() });
            }
            adam.begin_step();
            adam.update(0, enc.w1.data_mut(), g.w1.data());
            adam.update(1, enc.w2.data_mut(), g.w2.data());
        }
        let h = contrastive_loss_of(&enc, select_on, margin)?.0;
        hold_curve.push(h);
        if h < best.0 {
            best = (h, epoch, enc.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    let final_train_loss = contrastive_loss_of(&best.2, train, margin)?.0;
    Ok(TrainedEncoder {
        weights: best.2,
        best_epoch: best.1,
        initial_train_loss,
        final_train_loss,
        holdout_loss: hold_curve,
    })
}
