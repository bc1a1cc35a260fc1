//! Cached-versus-recompute equivalence checks run by `verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{KvConfig, ModelConfig, RunConfig};
use crate::model::{
    forward_full, forward_incremental, LayerKv, ModelDims, ModelError, ModelParams,
};
use crate::sim::{run_trace, RunOptions, SimError};
use crate::types::TokenId;
use crate::workload::{generate_trace, GenConfig, LengthDist, TraceRecord};

pub const TOLERANCE: f64 = 1e-5;

pub const ORACLE_DIMS: ModelDims = ModelDims {
    num_layers: 2,
    num_heads: 2,
    head_dim: 8,
    vocab_size: 64,
};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Seeded trials of incremental versus full forward at a random split point.
/// Returns the largest logit deviation seen. With `fault`, the cached values
/// are perturbed before the incremental call.
pub fn split_trials(trials: usize, seed: u64, fault: bool) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let params = ModelParams::seeded(ORACLE_DIMS, rng.gen());
        let v = ORACLE_DIMS.vocab_size as TokenId;
        let p = rng.gen_range(2..=256usize);
        let n = rng.gen_range(1..=8usize);
        let history: Vec<TokenId> = (0..p).map(|_| rng.gen_range(0..v)).collect();
        let cands: Vec<TokenId> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        let split = rng.gen_range(1..p);
        let full = forward_full(&params, &history, &cands)?;
        let prefix = forward_full(&params, &history[..split], &cands[..1])?;
        let mut cache: Vec<LayerKv> = prefix.new_kv.iter().map(|kv| kv.slice(0..split)).collect();
        if fault {
            for v in &mut cache[0].values {
                *v += 0.5;
            }
        }
        let inc = forward_incremental(&params, &cache, &history[split..], &cands)?;
        worst = worst.max(max_abs_diff(&full.logits, &inc.logits));
    }
    Ok(worst)
}

/// Small value-backend setup with forced evictions and sub-chunk tails.
pub fn end_to_end_config(seed: u64) -> RunConfig {
    RunConfig {
        kv: KvConfig {
            num_layers: 2,
            num_heads: 2,
            head_dim: 4,
            page_size: 4,
            chunk_size: 16,
            device_pages: 48,
            onload_pages: 256,
            bytes_per_element: 8,
            offload_quota: 64,
            host_capacity: 0,
        },
        model: ModelConfig {
            vocab_size: 64,
            seed,
        },
        ..RunConfig::default()
    }
}

pub fn end_to_end_trace(requests: usize, seed: u64) -> Result<Vec<TraceRecord>, SimError> {
    let users = (requests / 10).max(1);
    let gen = GenConfig {
        num_users: users,
        total_requests: requests.max(users),
        length: LengthDist::Gamma {
            shape: 2.0,
            mean: 60.0,
        },
        min_len: 1,
        max_len: 200,
        delta_mean: 5.0,
        candidates: 3,
        vocab: 64,
        horizon_ms: 2_000_000,
        arrival: crate::workload::Arrival::LogNormal {
            mu: 10.0,
            sigma: 1.5,
        },
        seed,
        ..GenConfig::default()
    };
    Ok(generate_trace(&gen)?)
}

/// Per-request logits under every mode; returns the largest deviation from
/// recompute and the number of evictions the caching modes went through.
pub fn end_to_end(requests: usize, seed: u64, batch_size: usize) -> Result<(f64, u64), SimError> {
    let cfg = end_to_end_config(seed);
    let trace = end_to_end_trace(requests, seed)?;
    let run = |mode: &str| {
        let opts = RunOptions {
            mode: mode.into(),
            backend: "value".into(),
            batch_size,
            record_events: false,
        };
        run_trace(&cfg, &trace, &opts)
    };
    let base = run("recompute")?;
    let mut worst: f64 = 0.0;
    let mut evictions = 0;
    for mode in ["gpu_only", "hierarchical"] {
        let out = run(mode)?;
        evictions += out.report.evictions;
        assert_eq!(
            out.outputs.len(),
            base.outputs.len(),
            "served request count differs"
        );
        for (a, b) in out.outputs.iter().zip(&base.outputs) {
            assert_eq!((a.user, a.timestamp), (b.user, b.timestamp));
            worst = worst.max(max_abs_diff(&a.logits, &b.logits));
        }
    }
    Ok((worst, evictions))
}
