//! Small deterministic HSTU-style reference model.
//!
//! Each block computes
//!
//! ```text
//! u, q, k, v = split(silu(e W_in + b_in))
//! o          = silu(attention(q, k, v))          causal softmax, per head
//! e'         = mlp(layer_norm(o * u))            one hidden layer of width d
//! ```
//!
//! and the logits are `W_out e_T` at the terminal position. There is no
//! positional encoding, so a position's output depends only on the tokens at
//! or before it. That is what makes the cached-incremental path equal to the
//! full recompute path, and the cache system relies on it as its oracle.
//!
//! All arithmetic is `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::TokenId;

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("token id {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: TokenId, vocab: usize },
    #[error("at least one candidate is required")]
    NoCandidates,
    #[error("cache has {got} layers, model has {expected}")]
    LayerMismatch { expected: usize, got: usize },
    #[error("cached prefix lengths differ across layers")]
    InconsistentCache,
    #[error("cache width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    pub fn width(&self) -> usize {
        self.num_heads * self.head_dim
    }
}

/// Weights of one block. Matrices are row-major `[in][out]`.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub norm_scale: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// `[vocab][d]`
    pub embedding: Vec<f64>,
    pub layers: Vec<LayerParams>,
    /// `[vocab][d]`, logits are `W_out e`.
    pub w_out: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let d = dims.width();
        let layer = LayerParams {
            w_in: vec![0.0; d * 4 * d],
            b_in: vec![0.0; 4 * d],
            norm_scale: vec![0.0; d],
            w1: vec![0.0; d * d],
            b1: vec![0.0; d],
            w2: vec![0.0; d * d],
            b2: vec![0.0; d],
        };
        Self {
            dims,
            embedding: vec![0.0; dims.vocab_size * d],
            layers: vec![layer; dims.num_layers],
            w_out: vec![0.0; dims.vocab_size * d],
        }
    }

    pub fn seeded(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims.width();
        let mut uniform = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let inv = 1.0 / (d as f64).sqrt();
        let embedding = uniform(dims.vocab_size * d, 1.0);
        let layers = (0..dims.num_layers)
            .map(|_| LayerParams {
                w_in: uniform(d * 4 * d, inv),
                b_in: uniform(4 * d, 0.1),
                norm_scale: uniform(d, 0.1).into_iter().map(|x| 1.0 + x).collect(),
                w1: uniform(d * d, inv),
                b1: uniform(d, 0.1),
                w2: uniform(d * d, inv),
                b2: uniform(d, 0.1),
            })
            .collect();
        let w_out = uniform(dims.vocab_size * d, inv);
        Self {
            dims,
            embedding,
            layers,
            w_out,
        }
    }
}

/// Keys and values of consecutive positions for one layer, `[len][H*D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub width: usize,
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

impl LayerKv {
    pub fn empty(width: usize) -> Self {
        Self {
            width,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Positions `range` as a new span.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let w = self.width;
        Self {
            width: w,
            keys: self.keys[range.start * w..range.end * w].to_vec(),
            values: self.values[range.start * w..range.end * w].to_vec(),
        }
    }

    pub fn extend_from(&mut self, other: &LayerKv) {
        debug_assert_eq!(self.width, other.width);
        self.keys.extend_from_slice(&other.keys);
        self.values.extend_from_slice(&other.values);
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    /// Per layer, the KV of every position processed by this call.
    pub new_kv: Vec<LayerKv>,
    /// Final hidden state at the terminal position.
    pub hidden: Vec<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `x [n][din] * w [din][dout] + b`
fn linear(x: &[f64], n: usize, din: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let dout = b.len();
    let mut out = Vec::with_capacity(n * dout);
    for row in x.chunks_exact(din).take(n) {
        let mut acc = b.to_vec();
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * dout..(i + 1) * dout];
            for (a, &wij) in acc.iter_mut().zip(wrow) {
                *a += xi * wij;
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Full recompute over `history ++ candidates`.
pub fn forward_full(
    params: &ModelParams,
    history: &[TokenId],
    candidates: &[TokenId],
) -> Result<ForwardOutput, ModelError> {
    let empty = vec![LayerKv::empty(params.dims.width()); params.dims.num_layers];
    forward_incremental(params, &empty, history, candidates)
}

/// Processes `delta ++ candidates` on top of a cached prefix.
///
/// `cached[l]` holds the KV of the prefix for layer `l`; all layers must
/// share one length. The returned `new_kv` covers only the positions
/// computed here (delta and candidates).
pub fn forward_incremental(
    params: &ModelParams,
    cached: &[LayerKv],
    delta: &[TokenId],
    candidates: &[TokenId],
) -> Result<ForwardOutput, ModelError> {
    let dims = params.dims;
    let d = dims.width();
    let (heads, hd) = (dims.num_heads, dims.head_dim);
    if candidates.is_empty() {
        return Err(ModelError::NoCandidates);
    }
    if cached.len() != dims.num_layers {
        return Err(ModelError::LayerMismatch {
            expected: dims.num_layers,
            got: cached.len(),
        });
    }
    if let Some(bad) = cached.iter().find(|kv| kv.width != d) {
        return Err(ModelError::WidthMismatch {
            expected: d,
            got: bad.width,
        });
    }
    let p_pre = cached[0].len();
    if cached
        .iter()
        .any(|kv| kv.len() != p_pre || kv.values.len() != kv.keys.len())
    {
        return Err(ModelError::InconsistentCache);
    }

    let tokens: Vec<TokenId> = delta.iter().chain(candidates).copied().collect();
    let n = tokens.len();
    let mut hidden = Vec::with_capacity(n * d);
    for &t in &tokens {
        let t_idx = t as usize;
        if t_idx >= dims.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                token: t,
                vocab: dims.vocab_size,
            });
        }
        hidden.extend_from_slice(&params.embedding[t_idx * d..(t_idx + 1) * d]);
    }

    let scale = 1.0 / (hd as f64).sqrt();
    let mut new_kv = Vec::with_capacity(dims.num_layers);
    for (layer, cache) in params.layers.iter().zip(cached) {
        let proj: Vec<f64> = linear(&hidden, n, d, &layer.w_in, &layer.b_in)
            .into_iter()
            .map(silu)
            .collect();
        let mut u = Vec::with_capacity(n * d);
        let mut q = Vec::with_capacity(n * d);
        let mut fresh = LayerKv {
            width: d,
            keys: Vec::with_capacity(n * d),
            values: Vec::with_capacity(n * d),
        };
        for row in proj.chunks_exact(4 * d) {
            u.extend_from_slice(&row[..d]);
            q.extend_from_slice(&row[d..2 * d]);
            fresh.keys.extend_from_slice(&row[2 * d..3 * d]);
            fresh.values.extend_from_slice(&row[3 * d..]);
        }

        let key_at = |j: usize| -> &[f64] {
            if j < p_pre {
                &cache.keys[j * d..(j + 1) * d]
            } else {
                &fresh.keys[(j - p_pre) * d..(j - p_pre + 1) * d]
            }
        };
        let value_at = |j: usize| -> &[f64] {
            if j < p_pre {
                &cache.values[j * d..(j + 1) * d]
            } else {
                &fresh.values[(j - p_pre) * d..(j - p_pre + 1) * d]
            }
        };

        let mut normed = Vec::with_capacity(n * d);
        let mut scores = Vec::new();
        for i in 0..n {
            let ctx = p_pre + i + 1;
            let qi = &q[i * d..(i + 1) * d];
            let mut o = vec![0.0; d];
            for h in 0..heads {
                let hs = h * hd..(h + 1) * hd;
                scores.clear();
                let mut max = f64::NEG_INFINITY;
                for j in 0..ctx {
                    let s: f64 = qi[hs.clone()]
                        .iter()
                        .zip(&key_at(j)[hs.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        * scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut denom = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                for (j, &w) in scores.iter().enumerate() {
                    let p = w / denom;
                    for (acc, &vv) in o[hs.clone()].iter_mut().zip(&value_at(j)[hs.clone()]) {
                        *acc += p * vv;
                    }
                }
            }
            // gate and normalize
            let ui = &u[i * d..(i + 1) * d];
            let x: Vec<f64> = o.iter().zip(ui).map(|(&a, &b)| silu(a) * b).collect();
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            normed.extend(
                x.iter()
                    .zip(&layer.norm_scale)
                    .map(|(v, g)| (v - mean) * inv * g),
            );
        }

        let mid: Vec<f64> = linear(&normed, n, d, &layer.w1, &layer.b1)
            .into_iter()
            .map(silu)
            .collect();
        hidden = linear(&mid, n, d, &layer.w2, &layer.b2);
        new_kv.push(fresh);
    }

    let last = hidden[(n - 1) * d..].to_vec();
    let logits = params
        .w_out
        .chunks_exact(d)
        .map(|row| row.iter().zip(&last).map(|(a, b)| a * b).sum())
        .collect();
    Ok(ForwardOutput {
        logits,
        new_kv,
        hidden: last,
    })
}

/// Candidates sorted by descending logit; ties keep their input order.
pub fn rank_candidates(logits: &[f64], candidates: &[TokenId]) -> Vec<TokenId> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| logits[*b as usize].total_cmp(&logits[*a as usize]));
    ranked
}

/// Attention token pairs for `T` positions of which the first `p_pre` are cached.
pub fn attention_cost(total: u64, p_pre: u64) -> u64 {
    assert!(p_pre <= total, "cached prefix longer than sequence");
    (total - p_pre) * total
}
