use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tierkv::model::{
    forward_full, forward_incremental, rank_candidates, LayerKv, ModelDims, ModelParams,
};
use tierkv::types::TokenId;

const TOL: f64 = 1e-5;

type Mat = Vec<Vec<f64>>;

fn silu(x: f64) -> f64 {
    x * (1.0 / (1.0 + (-x).exp()))
}

fn matmul(x: &Mat, w: &[f64], b: &[f64]) -> Mat {
    let dout = b.len();
    x.iter()
        .map(|row| {
            (0..dout)
                .map(|j| {
                    b[j] + row
                        .iter()
                        .enumerate()
                        .map(|(i, xi)| xi * w[i * dout + j])
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Dense whole-sequence evaluation with an explicit causal mask.
fn dense_reference(p: &ModelParams, tokens: &[TokenId]) -> Vec<f64> {
    let d = p.dims.width();
    let (heads, hd) = (p.dims.num_heads, p.dims.head_dim);
    let n = tokens.len();
    let mut x: Mat = tokens
        .iter()
        .map(|&t| p.embedding[t as usize * d..(t as usize + 1) * d].to_vec())
        .collect();
    for layer in &p.layers {
        let proj: Mat = matmul(&x, &layer.w_in, &layer.b_in)
            .into_iter()
            .map(|r| r.into_iter().map(silu).collect())
            .collect();
        let col = |r: &Vec<f64>, part: usize| r[part * d..(part + 1) * d].to_vec();
        let u: Mat = proj.iter().map(|r| col(r, 0)).collect();
        let q: Mat = proj.iter().map(|r| col(r, 1)).collect();
        let k: Mat = proj.iter().map(|r| col(r, 2)).collect();
        let v: Mat = proj.iter().map(|r| col(r, 3)).collect();
        let mut attn = vec![vec![0.0; d]; n];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        if j > i {
                            f64::NEG_INFINITY
                        } else {
                            (0..hd).map(|c| q[i][off + c] * k[j][off + c]).sum::<f64>()
                                / (hd as f64).sqrt()
                        }
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..hd {
                    attn[i][off + c] = (0..n).map(|j| e[j] / z * v[j][off + c]).sum();
                }
            }
        }
        let normed: Mat = (0..n)
            .map(|i| {
                let g: Vec<f64> = (0..d).map(|c| silu(attn[i][c]) * u[i][c]).collect();
                let mean = g.iter().sum::<f64>() / d as f64;
                let var = g.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / d as f64;
                g.iter()
                    .zip(&layer.norm_scale)
                    .map(|(a, s)| s * (a - mean) / (var + 1e-6).sqrt())
                    .collect()
            })
            .collect();
        let hidden: Mat = matmul(&normed, &layer.w1, &layer.b1)
            .into_iter()
            .map(|r| r.into_iter().map(silu).collect())
            .collect();
        x = matmul(&hidden, &layer.w2, &layer.b2);
    }
    let last = &x[n - 1];
    (0..p.dims.vocab_size)
        .map(|t| (0..d).map(|c| p.w_out[t * d + c] * last[c]).sum())
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn dims() -> ModelDims {
    ModelDims {
        num_layers: 2,
        num_heads: 2,
        head_dim: 8,
        vocab_size: 64,
    }
}

fn tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.gen_range(0..vocab as TokenId)).collect()
}

#[test]
fn full_forward_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let p = ModelParams::seeded(dims(), trial);
        let h = {
            let n = rng.gen_range(1..40);
            tokens(&mut rng, n, 64)
        };
        let c = {
            let n = rng.gen_range(1..5);
            tokens(&mut rng, n, 64)
        };
        let got = forward_full(&p, &h, &c).unwrap().logits;
        let all: Vec<TokenId> = h.iter().chain(&c).copied().collect();
        assert!(
            max_diff(&got, &dense_reference(&p, &all)) <= 1e-9,
            "trial {trial}"
        );
    }
}

#[test]
fn hundred_split_points_match_full() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let p = ModelParams::seeded(dims(), 1000 + trial);
        let len = rng.gen_range(2..=256);
        let h = tokens(&mut rng, len, 64);
        let c = {
            let n = rng.gen_range(1..=8);
            tokens(&mut rng, n, 64)
        };
        let split = rng.gen_range(1..len);
        let full = forward_full(&p, &h, &c).unwrap();
        let cache: Vec<LayerKv> = full.new_kv.iter().map(|kv| kv.slice(0..split)).collect();
        let inc = forward_incremental(&p, &cache, &h[split..], &c).unwrap();
        worst = worst.max(max_diff(&full.logits, &inc.logits));
    }
    assert!(worst <= TOL, "worst {worst}");
}

#[test]
fn chained_increments_equal_one_shot() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = ModelParams::seeded(dims(), 77);
    let h = tokens(&mut rng, 90, 64);
    let c = tokens(&mut rng, 4, 64);
    let mut cache = vec![LayerKv::empty(dims().width()); 2];
    for w in [0..13, 13..14, 14..60, 60..90] {
        let n = w.len();
        let out = forward_incremental(&p, &cache, &h[w], &c).unwrap();
        for (dst, kv) in cache.iter_mut().zip(&out.new_kv) {
            dst.extend_from(&kv.slice(0..n));
        }
    }
    let chained = forward_incremental(&p, &cache, &[], &c).unwrap();
    let full = forward_full(&p, &h, &c).unwrap();
    assert!(max_diff(&chained.logits, &full.logits) <= TOL);
}

#[test]
fn history_kv_does_not_depend_on_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = ModelParams::seeded(dims(), 3);
    let h = tokens(&mut rng, 30, 64);
    let a = forward_full(&p, &h, &[1, 2, 3]).unwrap();
    let b = forward_full(&p, &h, &[60]).unwrap();
    for (x, y) in a.new_kv.iter().zip(&b.new_kv) {
        assert_eq!(x.slice(0..30), y.slice(0..30));
    }
}

#[test]
fn ranking_matches_argsort() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let logits: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut cands = tokens(&mut rng, 10, 64);
        cands.dedup();
        let mut idx: Vec<usize> = (0..cands.len()).collect();
        idx.sort_by(|&i, &j| {
            logits[cands[j] as usize]
                .partial_cmp(&logits[cands[i] as usize])
                .unwrap()
                .then(i.cmp(&j))
        });
        let expect: Vec<TokenId> = idx.iter().map(|&i| cands[i]).collect();
        assert_eq!(rank_candidates(&logits, &cands), expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_split_is_equivalent(seed in 0u64..1_000, len in 2usize..64, nc in 1usize..4, frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ModelParams::seeded(dims(), seed);
        let h = tokens(&mut rng, len, 64);
        let c = tokens(&mut rng, nc, 64);
        let split = ((len as f64 * frac) as usize).min(len);
        let full = forward_full(&p, &h, &c).unwrap();
        let cache: Vec<LayerKv> = full.new_kv.iter().map(|kv| kv.slice(0..split)).collect();
        let inc = forward_incremental(&p, &cache, &h[split..], &c).unwrap();
        prop_assert!(max_diff(&full.logits, &inc.logits) <= TOL);
    }
}
