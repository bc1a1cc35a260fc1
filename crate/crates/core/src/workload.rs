//! JSONL traces and the synthetic workload generator.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Pareto, Triangular};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{pages_needed, Request, TokenId, UserId};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("cannot access trace {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("infeasible generator config: {0}")]
    Infeasible(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts: u64,
    pub user: UserId,
    pub dn: usize,
    pub nc: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cands: Option<Vec<TokenId>>,
}

impl TraceRecord {
    pub fn to_request(&self) -> Request {
        match (&self.tokens, &self.cands) {
            (Some(t), Some(c)) => Request::with_tokens(self.ts, self.user, t.clone(), c.clone()),
            _ => Request::counts(self.ts, self.user, self.dn, self.nc),
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.nc == 0 {
            return Err("nc must be >= 1".into());
        }
        if self.tokens.as_ref().is_some_and(|t| t.len() != self.dn) {
            return Err("tokens length differs from dn".into());
        }
        if self.cands.as_ref().is_some_and(|c| c.len() != self.nc) {
            return Err("cands length differs from nc".into());
        }
        if self.tokens.is_some() != self.cands.is_some() {
            return Err("tokens and cands must be given together".into());
        }
        Ok(())
    }
}

/// Parses JSONL text; blank lines are skipped. The result is stably sorted
/// by timestamp.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, WorkloadError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| WorkloadError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.check()
            .map_err(|msg| WorkloadError::Parse { line: i + 1, msg })?;
        out.push(rec);
    }
    out.sort_by_key(|r| r.ts);
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, WorkloadError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(&text)
}

pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn save_trace(path: &Path, records: &[TraceRecord]) -> Result<(), WorkloadError> {
    let io = |source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    f.write_all(trace_to_string(records).as_bytes())
        .map_err(io)?;
    f.flush().map_err(io)
}

/// Gap between consecutive visits of one user, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Arrival {
    LogNormal { mu: f64, sigma: f64 },
    Pareto { scale: f64, shape: f64 },
}

impl Arrival {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Arrival::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated").sample(rng)
            }
            Arrival::Pareto { scale, shape } => {
                Pareto::new(scale, shape).expect("validated").sample(rng)
            }
        }
    }
}

/// Final history length per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LengthDist {
    Fixed { len: usize },
    Gamma { shape: f64, mean: f64 },
    Triangular { min: f64, mode: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_users: usize,
    pub total_requests: usize,
    pub arrival: Arrival,
    /// Minimum spacing between two visits of one user (sessionization window).
    pub session_ms: u64,
    /// First visits are spread uniformly over `[0, horizon_ms)`.
    pub horizon_ms: u64,
    pub length: LengthDist,
    pub min_len: usize,
    /// History cap.
    pub max_len: usize,
    /// Mean new-token count of a return visit; the first visit carries the rest.
    pub delta_mean: f64,
    /// Fixed delta for every return visit, overriding `delta_mean`.
    pub fixed_delta: Option<usize>,
    pub candidates: usize,
    /// Emit token ids drawn from `[0, vocab)`; 0 = counts only.
    pub vocab: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        preset("kuairand1k").expect("builtin preset")
    }
}

pub const PRESETS: [&str; 2] = ["kuairand1k", "mt"];

pub fn preset(name: &str) -> Result<GenConfig, WorkloadError> {
    let base = GenConfig {
        num_users: 1000,
        total_requests: 20_000,
        arrival: Arrival::LogNormal {
            mu: 15.5,
            sigma: 1.0,
        },
        session_ms: 60_000,
        horizon_ms: 86_400_000,
        length: LengthDist::Gamma {
            shape: 2.0,
            mean: 6375.0,
        },
        min_len: 1,
        max_len: 20_000,
        delta_mean: 24.0,
        fixed_delta: None,
        candidates: 16,
        vocab: 0,
        seed: 0,
    };
    match name {
        "kuairand1k" => Ok(base),
        "mt" => Ok(GenConfig {
            num_users: 2884,
            length: LengthDist::Triangular {
                min: 4000.0,
                mode: 5567.0,
                max: 6000.0,
            },
            min_len: 4000,
            max_len: 6000,
            ..base
        }),
        other => Err(WorkloadError::UnknownPreset(other.to_string())),
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Infeasible(m.to_string()));
        if self.num_users == 0 {
            return bad("num_users must be positive");
        }
        if self.total_requests < self.num_users {
            return bad("total_requests must cover one visit per user");
        }
        if self.candidates == 0 {
            return bad("candidates must be >= 1");
        }
        if self.min_len > self.max_len {
            return bad("min_len exceeds max_len");
        }
        let mean = match self.length {
            LengthDist::Fixed { len } => len as f64,
            LengthDist::Gamma { shape, mean } => {
                if shape <= 0.0 || mean <= 0.0 {
                    return bad("gamma parameters must be positive");
                }
                mean
            }
            LengthDist::Triangular { min, mode, max } => {
                if !(min <= mode && mode <= max && min < max) {
                    return bad("triangular needs min <= mode <= max");
                }
                (min + mode + max) / 3.0
            }
        };
        if mean > self.max_len as f64 {
            return bad("mean length exceeds the history cap");
        }
        match self.arrival {
            Arrival::LogNormal { sigma, .. } if sigma.is_nan() || sigma <= 0.0 => {
                return bad("lognormal sigma must be positive")
            }
            Arrival::Pareto { scale, shape }
                if scale.is_nan() || shape.is_nan() || scale <= 0.0 || shape <= 0.0 =>
            {
                return bad("pareto parameters must be positive")
            }
            _ => {}
        }
        if self.delta_mean < 0.0 {
            return bad("delta_mean must be non-negative");
        }
        Ok(())
    }
}

fn sample_len(cfg: &GenConfig, rng: &mut impl Rng) -> usize {
    let x = match cfg.length {
        LengthDist::Fixed { len } => len as f64,
        LengthDist::Gamma { shape, mean } => Gamma::new(shape, mean / shape)
            .expect("validated")
            .sample(rng),
        LengthDist::Triangular { min, mode, max } => Triangular::new(min, max, mode)
            .expect("validated")
            .sample(rng),
    };
    (x.round() as usize).clamp(cfg.min_len.max(1), cfg.max_len)
}

/// Deterministic synthetic trace, sorted by timestamp.
pub fn generate_trace(cfg: &GenConfig) -> Result<Vec<TraceRecord>, WorkloadError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut visits = vec![1usize; cfg.num_users];
    for _ in cfg.num_users..cfg.total_requests {
        visits[rng.gen_range(0..cfg.num_users)] += 1;
    }
    let delta_dist = Exp::new(1.0 / cfg.delta_mean.max(1e-9)).expect("positive rate");
    let mut out = Vec::with_capacity(cfg.total_requests);
    for (u, &n) in visits.iter().enumerate() {
        let total = sample_len(cfg, &mut rng);
        let mut later: Vec<usize> = (1..n)
            .map(|_| match cfg.fixed_delta {
                Some(d) => d,
                None => delta_dist.sample(&mut rng).round() as usize,
            })
            .collect();
        let sum: usize = later.iter().sum();
        if sum >= total {
            // keep at least one token for the first visit
            let room = total - 1;
            for d in &mut later {
                *d = *d * room / sum;
            }
        }
        let first = total - later.iter().sum::<usize>();
        let mut ts = rng.gen_range(0..cfg.horizon_ms.max(1));
        for (i, dn) in std::iter::once(first).chain(later).enumerate() {
            if i > 0 {
                let gap = cfg.arrival.sample(&mut rng).clamp(1.0, 1e15) as u64;
                ts += cfg.session_ms + gap;
            }
            let (tokens, cands) = if cfg.vocab > 0 {
                let v = cfg.vocab as TokenId;
                (
                    Some((0..dn).map(|_| rng.gen_range(0..v)).collect()),
                    Some((0..cfg.candidates).map(|_| rng.gen_range(0..v)).collect()),
                )
            } else {
                (None, None)
            };
            out.push(TraceRecord {
                ts,
                user: u as UserId,
                dn,
                nc: cfg.candidates,
                tokens,
                cands,
            });
        }
    }
    out.sort_by_key(|r| r.ts);
    Ok(out)
}

/// Groups consecutive records into batches of `batch_size`; the last may be short.
pub fn batchify(records: &[TraceRecord], batch_size: usize) -> Vec<Vec<Request>> {
    assert!(batch_size >= 1, "batch size must be positive");
    records
        .chunks(batch_size)
        .map(|c| c.iter().map(TraceRecord::to_request).collect())
        .collect()
}

/// Final history length per user, in user order.
pub fn final_lengths(records: &[TraceRecord]) -> Vec<(UserId, usize)> {
    let mut m = std::collections::BTreeMap::new();
    for r in records {
        *m.entry(r.user).or_insert(0) += r.dn;
    }
    m.into_iter().collect()
}

/// Mean over request arrivals of the pages held by active users at their
/// current lengths. A user is active from its first visit through its last.
pub fn working_set_pages(records: &[TraceRecord], page_size: usize) -> usize {
    if records.is_empty() {
        return 0;
    }
    let mut last = std::collections::HashMap::new();
    for (i, r) in records.iter().enumerate() {
        last.insert(r.user, i);
    }
    let mut len = std::collections::HashMap::new();
    let mut held = 0usize;
    let mut sum = 0u128;
    for (i, r) in records.iter().enumerate() {
        let l = len.entry(r.user).or_insert(0usize);
        let old = pages_needed(*l, page_size);
        *l += r.dn;
        let new = pages_needed(*l, page_size);
        held = held + new - old;
        sum += held as u128;
        if last[&r.user] == i {
            held -= new;
        }
    }
    (sum / records.len() as u128) as usize
}
