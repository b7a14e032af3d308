use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{usage, Error, Result};
use crate::numcore::Matrix;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    /// `d_model × d_ffn`.
    pub w_up: Matrix,
    /// `d_ffn × d_model`; the down projection, applied as `down_in · w_down`.
    pub w_down: Matrix,
}

/// All trainable tensors of the decoder. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub blocks: Vec<Block>,
    pub lnf_gain: Matrix,
    pub lnf_bias: Matrix,
    /// `d_model × vocab_size`.
    pub head: Matrix,
}

impl Weights {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let block = || Block {
            ln1_gain: Matrix::zeros(1, d),
            ln1_bias: Matrix::zeros(1, d),
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            ln2_gain: Matrix::zeros(1, d),
            ln2_bias: Matrix::zeros(1, d),
            w_up: Matrix::zeros(d, cfg.d_ffn),
            w_down: Matrix::zeros(cfg.d_ffn, d),
        };
        Self {
            tok_emb: Matrix::zeros(cfg.vocab_size, d),
            pos_emb: Matrix::zeros(cfg.max_seq_len, d),
            blocks: (0..cfg.n_layers).map(|_| block()).collect(),
            lnf_gain: Matrix::zeros(1, d),
            lnf_bias: Matrix::zeros(1, d),
            head: Matrix::zeros(d, cfg.vocab_size),
        }
    }

    /// Tensors in a fixed canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, t) in [
                ("ln1_gain", &b.ln1_gain),
                ("ln1_bias", &b.ln1_bias),
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("ln2_gain", &b.ln2_gain),
                ("ln2_bias", &b.ln2_bias),
                ("w_up", &b.w_up),
                ("w_down", &b.w_down),
            ] {
                out.push((format!("blocks.{l}.{name}"), t));
            }
        }
        out.push(("lnf_gain".to_string(), &self.lnf_gain));
        out.push(("lnf_bias".to_string(), &self.lnf_bias));
        out.push(("head".to_string(), &self.head));
        out
    }

    /// Mutable tensors in the same order as [`Weights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                &mut b.w_up,
                &mut b.w_down,
            ]);
        }
        out.extend([&mut self.lnf_gain, &mut self.lnf_bias, &mut self.head]);
        out
    }

    pub fn add_assign(&mut self, other: &Weights) {
        let theirs: Vec<&Matrix> = other.named().into_iter().map(|(_, t)| t).collect();
        for (mine, t) in self.tensors_mut().into_iter().zip(theirs) {
            mine.add_assign(t);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

/// Replaces the down-projection output of one layer with a fixed vector over
/// the positions `start..end` (clipped to the sequence).
#[derive(Debug, Clone, Copy)]
pub struct Substitution<'a> {
    pub layer: usize,
    pub start: usize,
    pub end: Option<usize>,
    pub value: &'a [f64],
}

impl Substitution<'_> {
    fn covers(&self, pos: usize) -> bool {
        pos >= self.start && self.end.is_none_or(|e| pos < e)
    }
}

/// Down-projection input and output of one layer for every position.
#[derive(Debug, Clone, PartialEq)]
pub struct HookCapture {
    pub layer_index: usize,
    /// `len × d_ffn`.
    pub down_in: Matrix,
    /// `len × d_model`.
    pub down_out: Matrix,
}

struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

struct LayerCache {
    ln1: LnCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities per head, each `len × len`.
    probs: Vec<Matrix>,
    attn_cat: Matrix,
    ln2: LnCache,
    b: Matrix,
    h_pre: Matrix,
    down_in: Matrix,
    down_out: Matrix,
}

/// Activations retained by [`ToyDecoder::forward`] for the backward pass.
pub struct ForwardCache {
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Matrix,
    substituted: Option<(usize, usize, Option<usize>)>,
    pub logits: Matrix,
}

impl ForwardCache {
    pub fn capture(&self, layer: usize) -> HookCapture {
        let c = &self.layers[layer];
        HookCapture { layer_index: layer, down_in: c.down_in.clone(), down_out: c.down_out.clone() }
    }

    pub fn down_in(&self, layer: usize) -> &Matrix {
        &self.layers[layer].down_in
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Gradients from [`ToyDecoder::backward`].
pub struct Backward {
    pub weights: Option<Weights>,
    /// Gradient of the loss w.r.t. each layer's down-projection output
    /// (`len × d_model`), for the layers that were visited.
    pub d_down_out: Vec<Option<Matrix>>,
}

/// How far down and how completely [`ToyDecoder::backward`] runs.
#[derive(Debug, Clone, Copy)]
pub struct BackwardScope {
    /// Lowest layer whose gradients are needed; layers below are skipped.
    pub lowest_layer: usize,
    /// Whether to accumulate parameter gradients.
    pub params: bool,
}

/// A small pre-LN decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDecoder {
    pub config: ModelConfig,
    pub weights: Weights,
}

impl ToyDecoder {
    /// Random initialization, reproducible from `config.rng_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let d = config.d_model;
        let mut w = Weights::zeros(&config);
        let mut fill = |m: &mut Matrix, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            m.data_mut().iter_mut().for_each(|x| *x = dist.sample(&mut rng));
        };
        let proj = 1.0 / (d as f64).sqrt();
        let resid = proj / (2.0 * config.n_layers as f64).sqrt();
        fill(&mut w.tok_emb, 1.0);
        fill(&mut w.pos_emb, 0.2);
        for b in &mut w.blocks {
            b.ln1_gain.fill(1.0);
            b.ln2_gain.fill(1.0);
            fill(&mut b.wq, proj);
            fill(&mut b.wk, proj);
            fill(&mut b.wv, proj);
            fill(&mut b.wo, resid);
            fill(&mut b.w_up, proj);
            fill(&mut b.w_down, 1.0 / (config.d_ffn as f64).sqrt() / (2.0 * config.n_layers as f64).sqrt());
        }
        w.lnf_gain.fill(1.0);
        fill(&mut w.head, proj);
        Ok(Self { config, weights: w })
    }

    /// SHA-256 over the configuration and every parameter's bit pattern.
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in self.weights.named() {
            h.update(name.as_bytes());
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for x in t.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return usage("token sequence is empty");
        }
        if tokens.len() > self.config.max_seq_len {
            return usage(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            ));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!(
                "token id {t} is outside the vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.config.n_layers {
            return usage(format!("layer {layer} out of range for {} layers", self.config.n_layers));
        }
        Ok(())
    }

    /// Logits for every position, `len × vocab_size`.
    pub fn logits(&self, tokens: &[u32]) -> Result<Matrix> {
        Ok(self.forward(tokens, None)?.logits)
    }

    /// Forward pass that also returns the down-projection hook capture of `layer`.
    pub fn forward_with_hooks(&self, tokens: &[u32], layer: usize) -> Result<(Matrix, HookCapture)> {
        self.check_layer(layer)?;
        let cache = self.forward(tokens, None)?;
        let capture = cache.capture(layer);
        Ok((cache.logits, capture))
    }

    /// Full forward pass retaining activations, with an optional substitution
    /// of one layer's down-projection output.
    pub fn forward(&self, tokens: &[u32], sub: Option<&Substitution>) -> Result<ForwardCache> {
        self.check_tokens(tokens)?;
        if let Some(s) = sub {
            self.check_layer(s.layer)?;
            if s.value.len() != self.config.d_model {
                return usage(format!(
                    "substituted value has width {}, expected {}",
                    s.value.len(),
                    self.config.d_model
                ));
            }
        }
        let cfg = &self.config;
        let (n, d) = (tokens.len(), cfg.d_model);
        let w = &self.weights;
        let mut x = Matrix::from_fn(n, d, |t, j| w.tok_emb[(tokens[t] as usize, j)] + w.pos_emb[(t, j)]);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (l, blk) in w.blocks.iter().enumerate() {
            let (a, ln1) = layer_norm(&x, &blk.ln1_gain, &blk.ln1_bias);
            let q = a.matmul(&blk.wq);
            let k = a.matmul(&blk.wk);
            let v = a.matmul(&blk.wv);
            let (attn_cat, probs) = causal_attention(&q, &k, &v, cfg.n_heads);
            let attn = attn_cat.matmul(&blk.wo);
            let mut x_mid = x.clone();
            x_mid.add_assign(&attn);
            let (b, ln2) = layer_norm(&x_mid, &blk.ln2_gain, &blk.ln2_bias);
            let h_pre = b.matmul(&blk.w_up);
            let mut down_in = h_pre.clone();
            down_in.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
            let mut down_out = down_in.matmul(&blk.w_down);
            if let Some(s) = sub.filter(|s| s.layer == l) {
                for t in (0..n).filter(|&t| s.covers(t)) {
                    down_out.row_mut(t).copy_from_slice(s.value);
                }
            }
            let mut x_out = x_mid;
            x_out.add_assign(&down_out);
            x = x_out;
            layers.push(LayerCache { ln1, a, q, k, v, probs, attn_cat, ln2, b, h_pre, down_in, down_out });
        }
        let (z, lnf) = layer_norm(&x, &w.lnf_gain, &w.lnf_bias);
        let logits = z.matmul(&w.head);
        Ok(ForwardCache {
            tokens: tokens.to_vec(),
            layers,
            lnf,
            z,
            substituted: sub.map(|s| (s.layer, s.start, s.end)),
            logits,
        })
    }

    /// Backpropagates `dlogits` through the network.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix, scope: BackwardScope) -> Backward {
        let cfg = &self.config;
        let w = &self.weights;
        let n = cache.tokens.len();
        assert_eq!(dlogits.shape(), (n, cfg.vocab_size));
        let mut grads = scope.params.then(|| Weights::zeros(cfg));

        let dz = dlogits.matmul_t(&w.head);
        if let Some(g) = grads.as_mut() {
            g.head.add_t_matmul(&cache.z, dlogits);
        }
        let mut dx = layer_norm_backward(
            &dz,
            &cache.lnf,
            &w.lnf_gain,
            grads.as_mut().map(|g| (&mut g.lnf_gain, &mut g.lnf_bias)),
        );

        let mut d_down_out: Vec<Option<Matrix>> = (0..cfg.n_layers).map(|_| None).collect();
        for l in (scope.lowest_layer..cfg.n_layers).rev() {
            let blk = &w.blocks[l];
            let c = &cache.layers[l];
            let mut gblk = grads.as_mut().map(|g| &mut g.blocks[l]);

            // x_out = x_mid + down_out
            let mut d_down = dx.clone();
            if let Some((sl, start, end)) = cache.substituted.filter(|(sl, _, _)| *sl == l) {
                let s = Substitution { layer: sl, start, end, value: &[] };
                for t in (0..n).filter(|&t| s.covers(t)) {
                    d_down.row_mut(t).fill(0.0);
                }
            }
            let d_down_in = d_down.matmul_t(&blk.w_down);
            if let Some(g) = gblk.as_deref_mut() {
                g.w_down.add_t_matmul(&c.down_in, &d_down);
            }
            d_down_out[l] = Some(dx.clone());
            let mut dh = d_down_in;
            for (g, h) in dh.data_mut().iter_mut().zip(c.h_pre.data()) {
                *g *= gelu_grad(*h);
            }
            let db = dh.matmul_t(&blk.w_up);
            if let Some(g) = gblk.as_deref_mut() {
                g.w_up.add_t_matmul(&c.b, &dh);
            }
            let dx_mid_ln = layer_norm_backward(
                &db,
                &c.ln2,
                &blk.ln2_gain,
                gblk.as_deref_mut().map(|g| (&mut g.ln2_gain, &mut g.ln2_bias)),
            );
            let mut dx_mid = dx;
            dx_mid.add_assign(&dx_mid_ln);

            // x_mid = x_in + attn_cat · wo
            let d_cat = dx_mid.matmul_t(&blk.wo);
            if let Some(g) = gblk.as_deref_mut() {
                g.wo.add_t_matmul(&c.attn_cat, &dx_mid);
            }
            let (dq, dk, dv) = causal_attention_backward(&d_cat, &c.q, &c.k, &c.v, &c.probs, cfg.n_heads);
            let mut da = dq.matmul_t(&blk.wq);
            da.add_assign(&dk.matmul_t(&blk.wk));
            da.add_assign(&dv.matmul_t(&blk.wv));
            if let Some(g) = gblk.as_deref_mut() {
                g.wq.add_t_matmul(&c.a, &dq);
                g.wk.add_t_matmul(&c.a, &dk);
                g.wv.add_t_matmul(&c.a, &dv);
            }
            let dx_in_ln = layer_norm_backward(
                &da,
                &c.ln1,
                &blk.ln1_gain,
                gblk.as_deref_mut().map(|g| (&mut g.ln1_gain, &mut g.ln1_bias)),
            );
            dx = dx_mid;
            dx.add_assign(&dx_in_ln);
        }
        if scope.lowest_layer == 0 {
            if let Some(g) = grads.as_mut() {
                for t in 0..n {
                    let tok = cache.tokens[t] as usize;
                    for j in 0..cfg.d_model {
                        g.tok_emb[(tok, j)] += dx[(t, j)];
                        g.pos_emb[(t, j)] += dx[(t, j)];
                    }
                }
            }
        }
        Backward { weights: grads, d_down_out }
    }
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, LnCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for t in 0..n {
        let row = x.row(t);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            xhat[(t, j)] = xh;
            out[(t, j)] = xh * gain.data()[j] + bias.data()[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Matrix,
    cache: &LnCache,
    gain: &Matrix,
    param_grads: Option<(&mut Matrix, &mut Matrix)>,
) -> Matrix {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let g = gain.data();
    for t in 0..n {
        let dyr = dy.row(t);
        let xh = cache.xhat.row(t);
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        let r = cache.rstd[t];
        let out = dx.row_mut(t);
        for j in 0..d {
            out[j] = r * (dyr[j] * g[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    if let Some((dg, db)) = param_grads {
        for t in 0..n {
            let dyr = dy.row(t);
            let xh = cache.xhat.row(t);
            for j in 0..d {
                dg.data_mut()[j] += dyr[j] * xh[j];
                db.data_mut()[j] += dyr[j];
            }
        }
    }
    dx
}

fn causal_attention(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> (Matrix, Vec<Matrix>) {
    let (n, d) = q.shape();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Matrix::zeros(n, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let off = h * hd;
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let qi = &q.row(i)[off..off + hd];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let s = scale * crate::numcore::dot(qi, &k.row(j)[off..off + hd]);
                p[(i, j)] = s;
                max = max.max(s);
            }
            let mut sum = 0.0;
            for j in 0..=i {
                let e = (p[(i, j)] - max).exp();
                p[(i, j)] = e;
                sum += e;
            }
            for j in 0..=i {
                p[(i, j)] /= sum;
            }
            let orow = &mut out.row_mut(i)[off..off + hd];
            for j in 0..=i {
                let pij = p[(i, j)];
                for (o, vv) in orow.iter_mut().zip(&v.row(j)[off..off + hd]) {
                    *o += pij * vv;
                }
            }
        }
        probs.push(p);
    }
    (out, probs)
}

fn causal_attention_backward(
    d_out: &Matrix,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    probs: &[Matrix],
    heads: usize,
) -> (Matrix, Matrix, Matrix) {
    let (n, d) = q.shape();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    let mut dp = vec![0.0; n];
    for (h, p) in probs.iter().enumerate() {
        let off = h * hd;
        for i in 0..n {
            let doi = &d_out.row(i)[off..off + hd];
            let mut dot_pdp = 0.0;
            for j in 0..=i {
                dp[j] = crate::numcore::dot(doi, &v.row(j)[off..off + hd]);
                dot_pdp += dp[j] * p[(i, j)];
                let pij = p[(i, j)];
                let dvj = &mut dv.row_mut(j)[off..off + hd];
                for (a, b) in dvj.iter_mut().zip(doi) {
                    *a += pij * b;
                }
            }
            for j in 0..=i {
                let ds = p[(i, j)] * (dp[j] - dot_pdp) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..hd {
                    dq[(i, off + c)] += ds * k[(j, off + c)];
                    dk[(j, off + c)] += ds * q[(i, off + c)];
                }
            }
        }
    }
    (dq, dk, dv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Mean token cross-entropy over positions with a target, and its gradient
/// w.r.t. the logits. `targets[t]` is the token expected after position `t`.
pub fn cross_entropy(logits: &Matrix, targets: &[Option<u32>]) -> (f64, Matrix) {
    let (n, v) = logits.shape();
    assert_eq!(targets.len(), n);
    let count = targets.iter().filter(|t| t.is_some()).count().max(1) as f64;
    let mut grad = Matrix::zeros(n, v);
    let mut loss = 0.0;
    for (t, target) in targets.iter().enumerate() {
        let Some(y) = *target else { continue };
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y as usize];
        let g = grad.row_mut(t);
        for (gj, x) in g.iter_mut().zip(row) {
            *gj = (x - lse).exp() / count;
        }
        g[y as usize] -= 1.0 / count;
    }
    (loss / count, grad)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;

    fn tiny() -> ToyDecoder {
        let cfg = ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ffn: 12,
            max_seq_len: 10,
            rng_seed: 5,
        };
        ToyDecoder::new(cfg).unwrap()
    }

    fn targets(tokens: &[u32]) -> Vec<Option<u32>> {
        (0..tokens.len()).map(|t| tokens.get(t + 1).copied()).collect()
    }

    fn loss_of(model: &ToyDecoder, tokens: &[u32]) -> f64 {
        let cache = model.forward(tokens, None).unwrap();
        cross_entropy(&cache.logits, &targets(tokens)).0
    }

    #[test]
    fn full_parameter_gradient_matches_finite_differences() {
        let model = tiny();
        let tokens = [3, 1, 4, 1, 5, 9];
        let flat: Vec<f64> =
            model.weights.named().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let objective = |theta: &[f64]| {
            let mut m = model.clone();
            let mut off = 0;
            for t in m.weights.tensors_mut() {
                let len = t.data().len();
                t.data_mut().copy_from_slice(&theta[off..off + len]);
                off += len;
            }
            let cache = m.forward(&tokens, None).unwrap();
            let (loss, dlogits) = cross_entropy(&cache.logits, &targets(&tokens));
            let g = m
                .backward(&cache, &dlogits, BackwardScope { lowest_layer: 0, params: true })
                .weights
                .unwrap();
            let grad: Vec<f64> = g.named().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
            (loss, grad)
        };
        let report = grad_check(objective, &flat, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn substituted_value_gradient_matches_finite_differences() {
        let model = tiny();
        let tokens = [2, 7, 7, 3, 8];
        let layer = 1;
        let start = 2;
        let base = model.forward(&tokens, None).unwrap();
        let init = base.layers[layer].down_out.row(start).to_vec();
        let objective = |value: &[f64]| {
            let sub = Substitution { layer, start, end: None, value };
            let cache = model.forward(&tokens, Some(&sub)).unwrap();
            let (loss, dlogits) = cross_entropy(&cache.logits, &targets(&tokens));
            let bw = model.backward(&cache, &dlogits, BackwardScope { lowest_layer: layer, params: false });
            let d = bw.d_down_out[layer].as_ref().unwrap();
            let mut grad = vec![0.0; value.len()];
            for t in start..tokens.len() {
                for (g, x) in grad.iter_mut().zip(d.row(t)) {
                    *g += x;
                }
            }
            (loss, grad)
        };
        let report = grad_check(objective, &init, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn substitution_blocks_down_projection_gradient() {
        let model = tiny();
        let tokens = [1, 2, 3];
        let value = vec![0.1; 8];
        let sub = Substitution { layer: 0, start: 0, end: None, value: &value };
        let cache = model.forward(&tokens, Some(&sub)).unwrap();
        let (_, dlogits) = cross_entropy(&cache.logits, &targets(&tokens));
        let g = model
            .backward(&cache, &dlogits, BackwardScope { lowest_layer: 0, params: true })
            .weights
            .unwrap();
        assert_eq!(g.blocks[0].w_down.max_abs(), 0.0);
        assert_eq!(g.blocks[0].w_up.max_abs(), 0.0);
        assert!(g.blocks[1].w_down.max_abs() > 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let logits = Matrix::zeros(2, 4);
        let (loss, _) = cross_entropy(&logits, &[Some(1), None]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn digest_tracks_parameters() {
        let m = tiny();
        let mut m2 = m.clone();
        assert_eq!(m.weights_digest(), m2.weights_digest());
        m2.weights.blocks[1].w_down[(0, 0)] += 1e-12;
        assert_ne!(m.weights_digest(), m2.weights_digest());
        assert!(loss_of(&m, &[1, 2, 3]).is_finite());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
