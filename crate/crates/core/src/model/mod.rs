//! GPT-2 style decoder: pre-layer-norm residual blocks, exact-erf GELU MLP,
//! learned positions, unembedding tied to the token embedding.
//!
//! A forward pass can add a per-head bias to the scaled attention scores of
//! one layer and can record every attention matrix.

mod attention;
mod config;
pub mod manifest;
mod metrics;
mod weights;

pub use attention::{AttentionBias, AttentionTrace, BiasMatrix, HeadMatrix};
pub use config::ModelConfig;
pub use metrics::{log_softmax_at, perplexity, sequence_nll, top1_flags};
pub use weights::{tensor_layout, LayerWeights, WeightSet};

use crate::error::{Error, Result};

/// Dot products longer than this accumulate in `f64`.
const F64_ACCUMULATE_ABOVE: usize = 1024;

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: WeightSet,
}

/// Output of [`Model::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub seq_len: usize,
    pub vocab_size: usize,
    /// Row-major `seq_len x vocab_size`; row `i` scores the token at `i + 1`.
    pub logits: Vec<f32>,
    /// `ln p(token_i | tokens_<i)` for `i = 1..seq_len`, so index `k` is position `k + 1`.
    pub target_log_probs: Vec<f64>,
    pub trace: Option<AttentionTrace>,
}

impl ForwardResult {
    pub fn logits_row(&self, i: usize) -> &[f32] {
        &self.logits[i * self.vocab_size..(i + 1) * self.vocab_size]
    }

    /// Probability the model gave the actual token at `position` (`None` at position 0).
    pub fn probability_at(&self, position: usize) -> Option<f64> {
        position
            .checked_sub(1)
            .and_then(|k| self.target_log_probs.get(k))
            .map(|lp| lp.exp())
    }

    /// Probabilities of the actual next tokens, for positions `1..seq_len`.
    pub fn next_token_probabilities(&self) -> Vec<f64> {
        self.target_log_probs.iter().map(|lp| lp.exp()).collect()
    }
}

/// Residual stream entering a given layer, reusable across forward passes that
/// only differ from that layer onwards.
#[derive(Debug, Clone)]
pub struct LayerInput {
    tokens: Vec<u32>,
    /// 1-based layer this hidden state feeds into.
    layer: usize,
    hidden: Vec<f32>,
}

impl LayerInput {
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn layer(&self) -> usize {
        self.layer
    }
}

impl Model {
    pub fn new(config: ModelConfig, weights: WeightSet) -> Result<Self> {
        weights.validate(&config)?;
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if tokens.len() > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: self.config.max_context,
            });
        }
        if let Some(&id) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn embed(&self, tokens: &[u32]) -> Vec<f32> {
        let d = self.config.d_model;
        let mut hidden = vec![0.0f32; tokens.len() * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let te = &self.weights.token_embedding[tok as usize * d..(tok as usize + 1) * d];
            let pe = &self.weights.position_embedding[i * d..(i + 1) * d];
            for ((h, a), b) in hidden[i * d..(i + 1) * d].iter_mut().zip(te).zip(pe) {
                *h = a + b;
            }
        }
        hidden
    }

    /// Full forward pass. `bias`, when given, is added to the scaled scores of
    /// its layer; `capture` records all attention matrices.
    pub fn forward(
        &self,
        tokens: &[u32],
        bias: Option<&AttentionBias>,
        capture: bool,
    ) -> Result<ForwardResult> {
        self.check_tokens(tokens)?;
        if let Some(b) = bias {
            b.check(self.config.n_layers, self.config.n_heads, tokens.len())?;
        }
        let mut hidden = self.embed(tokens);
        let mut trace = capture.then(|| {
            AttentionTrace::zeros(self.config.n_layers, self.config.n_heads, tokens.len())
        });
        for l in 0..self.config.n_layers {
            let layer_bias = bias.filter(|b| b.layer == l + 1);
            self.block(l, &mut hidden, tokens.len(), layer_bias, trace.as_mut());
        }
        Ok(self.head_out(tokens, &hidden, trace))
    }

    /// Run the unbiased layers before `layer` (1-based) and keep the residual stream.
    pub fn prefix(&self, tokens: &[u32], layer: usize) -> Result<LayerInput> {
        self.check_tokens(tokens)?;
        if layer == 0 || layer > self.config.n_layers {
            return Err(Error::BiasLayerOutOfRange {
                layer,
                n_layers: self.config.n_layers,
            });
        }
        let mut hidden = self.embed(tokens);
        for l in 0..layer - 1 {
            self.block(l, &mut hidden, tokens.len(), None, None);
        }
        Ok(LayerInput {
            tokens: tokens.to_vec(),
            layer,
            hidden,
        })
    }

    /// Resume a forward pass from a cached [`LayerInput`]. Gives the same
    /// logits as [`Model::forward`] for any bias at or after the cached layer.
    pub fn forward_from(
        &self,
        input: &LayerInput,
        bias: Option<&AttentionBias>,
    ) -> Result<ForwardResult> {
        let n = input.tokens.len();
        if let Some(b) = bias {
            b.check(self.config.n_layers, self.config.n_heads, n)?;
            if b.layer < input.layer {
                return Err(Error::BiasShape(format!(
                    "bias targets layer {} but the cached input starts at layer {}",
                    b.layer, input.layer
                )));
            }
        }
        let mut hidden = input.hidden.clone();
        for l in input.layer - 1..self.config.n_layers {
            let layer_bias = bias.filter(|b| b.layer == l + 1);
            self.block(l, &mut hidden, n, layer_bias, None);
        }
        Ok(self.head_out(&input.tokens, &hidden, None))
    }

    fn head_out(
        &self,
        tokens: &[u32],
        hidden: &[f32],
        trace: Option<AttentionTrace>,
    ) -> ForwardResult {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let n = tokens.len();
        let mut normed = vec![0.0f32; n * d];
        layer_norm(
            hidden,
            &self.weights.final_ln_g,
            &self.weights.final_ln_b,
            self.config.layernorm_epsilon,
            d,
            &mut normed,
        );
        let mut logits = vec![0.0f32; n * v];
        for i in 0..n {
            let h = &normed[i * d..(i + 1) * d];
            let row = &mut logits[i * v..(i + 1) * v];
            for (tok, out) in row.iter_mut().enumerate() {
                *out = dot(h, &self.weights.token_embedding[tok * d..(tok + 1) * d]);
            }
        }
        let target_log_probs = (1..n)
            .map(|i| log_softmax_at(&logits[(i - 1) * v..i * v], tokens[i] as usize))
            .collect();
        ForwardResult {
            seq_len: n,
            vocab_size: v,
            logits,
            target_log_probs,
            trace,
        }
    }

    fn block(
        &self,
        layer: usize,
        hidden: &mut [f32],
        n: usize,
        bias: Option<&AttentionBias>,
        trace: Option<&mut AttentionTrace>,
    ) {
        let cfg = &self.config;
        let w = &self.weights.layers[layer];
        let d = cfg.d_model;
        let dh = cfg.d_head;
        let eps = cfg.layernorm_epsilon;

        let mut x = vec![0.0f32; n * d];
        layer_norm(hidden, &w.ln1_g, &w.ln1_b, eps, d, &mut x);
        let q = linear(&x, n, d, &w.wq, &w.bq, d);
        let k = linear(&x, n, d, &w.wk, &w.bk, d);
        let v = linear(&x, n, d, &w.wv, &w.bv, d);

        let scale = (dh as f32).sqrt();
        let mut mixed = vec![0.0f32; n * d];
        let mut scores = vec![0.0f32; n];
        let mut probs = vec![0.0f32; n];
        let mut trace = trace;
        for h in 0..cfg.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let head_bias = bias.map(|b| &b.heads[h]);
            for i in 0..n {
                let qi = &q[i * d..(i + 1) * d][cols.clone()];
                // Keys j > i are never scored, so the bias cannot reach them.
                for j in 0..=i {
                    let kj = &k[j * d..(j + 1) * d][cols.clone()];
                    let mut s = dot(qi, kj) / scale;
                    if let Some(b) = head_bias {
                        s += b.get(i, j) as f32;
                    }
                    scores[j] = s;
                }
                softmax_into(&scores[..=i], &mut probs[..=i]);
                let out = &mut mixed[i * d..(i + 1) * d][cols.clone()];
                for j in 0..=i {
                    let p = probs[j];
                    let vj = &v[j * d..(j + 1) * d][cols.clone()];
                    for (o, &val) in out.iter_mut().zip(vj) {
                        *o += p * val;
                    }
                }
                if let Some(t) = trace.as_deref_mut() {
                    t.head_mut(layer, h)[i * n..i * n + i + 1].copy_from_slice(&probs[..=i]);
                }
            }
        }
        let attn_out = linear(&mixed, n, d, &w.wo, &w.bo, d);
        for (r, a) in hidden.iter_mut().zip(&attn_out) {
            *r += a;
        }

        layer_norm(hidden, &w.ln2_g, &w.ln2_b, eps, d, &mut x);
        let mut inner = linear(&x, n, d, &w.w_in, &w.b_in, cfg.d_mlp);
        for u in inner.iter_mut() {
            *u = gelu(*u);
        }
        let mlp_out = linear(&inner, n, cfg.d_mlp, &w.w_out, &w.b_out, d);
        for (r, m) in hidden.iter_mut().zip(&mlp_out) {
            *r += m;
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    if a.len() > F64_ACCUMULATE_ABOVE {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum::<f64>() as f32
    } else {
        a.iter().zip(b).map(|(&x, &y)| x * y).sum()
    }
}

/// `x[n, d_in] · w[d_in, d_out] + b`.
fn linear(x: &[f32], n: usize, d_in: usize, w: &[f32], b: &[f32], d_out: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * d_out];
    if d_in > F64_ACCUMULATE_ABOVE {
        let mut acc = vec![0.0f64; d_out];
        for i in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (kk, &xv) in x[i * d_in..(i + 1) * d_in].iter().enumerate() {
                let xv = xv as f64;
                for (a, &wv) in acc.iter_mut().zip(&w[kk * d_out..(kk + 1) * d_out]) {
                    *a += xv * wv as f64;
                }
            }
            for ((o, a), bv) in out[i * d_out..(i + 1) * d_out].iter_mut().zip(&acc).zip(b) {
                *o = (*a as f32) + bv;
            }
        }
    } else {
        for i in 0..n {
            let row = &mut out[i * d_out..(i + 1) * d_out];
            for (kk, &xv) in x[i * d_in..(i + 1) * d_in].iter().enumerate() {
                for (o, &wv) in row.iter_mut().zip(&w[kk * d_out..(kk + 1) * d_out]) {
                    *o += xv * wv;
                }
            }
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    out
}

fn layer_norm(x: &[f32], g: &[f32], b: &[f32], eps: f32, d: usize, out: &mut [f32]) {
    for (row, dst) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for (((o, &v), &gv), &bv) in dst.iter_mut().zip(row).zip(g).zip(b) {
            *o = (v - mean) * inv * gv + bv;
        }
    }
}

#[inline]
fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
}

fn softmax_into(scores: &[f32], out: &mut [f32]) {
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut total = 0.0f64;
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| {
            let e = (s as f64 - max).exp();
            total += e;
            e
        })
        .collect();
    for (o, e) in out.iter_mut().zip(exps) {
        *o = (e / total) as f32;
    }
}
