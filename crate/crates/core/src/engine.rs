//! Per-batch serving loop: metadata, onload, layer-wise compute against the
//! onload handle, append, and offload submission, charged in simulated time.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::config::RunConfig;
use crate::manager::{strip_cached_tokens, BatchMetadata, CacheError, CacheManager, PageOwner};
use crate::mode::ServingMode;
use crate::model::{forward_incremental, LayerKv, ModelDims, ModelError, ModelParams};
use crate::pipeline::{Lane, Pipeline};
use crate::report::{hit_ratios, HitAccumulator, RunReport, StepTime, STEP_INFERENCE, STEP_LABELS};
use crate::store::{tag_span, BackendRegistry, KvSpan, PlaneGeometry};
use crate::types::{Request, TokenId, UserId};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("request for user {user} at {ts}: {msg}")]
    BadRequest { user: UserId, ts: u64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Value,
    Tag,
    Null,
}

/// Logits of one served request (value backend only).
#[derive(Debug, Clone, PartialEq)]
pub struct RequestOutput {
    pub user: UserId,
    pub timestamp: u64,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchOutcome {
    Served {
        start: f64,
        end: f64,
        steps: [f64; 9],
    },
    Rejected,
}

#[derive(Debug)]
pub struct Engine {
    cfg: RunConfig,
    mode: Box<dyn ServingMode>,
    backend: BackendKind,
    backend_name: String,
    mgr: CacheManager,
    pipe: Pipeline,
    now: f64,
    params: Option<ModelParams>,
    histories: HashMap<UserId, Vec<TokenId>>,
    outputs: Vec<RequestOutput>,
    hits: HitAccumulator,
    tokens_processed: u64,
    step_sums: [f64; 9],
    wait_sum: f64,
    comp_sum: f64,
    requests: u64,
    batches: u64,
    rejected: u64,
}

impl Engine {
    pub fn new(
        cfg: RunConfig,
        mode: Box<dyn ServingMode>,
        backend: &str,
        record_events: bool,
    ) -> Result<Self, EngineError> {
        let kind = match backend {
            "value" => BackendKind::Value,
            "tag" => BackendKind::Tag,
            "null" => BackendKind::Null,
            other => return Err(EngineError::UnknownBackend(other.to_string())),
        };
        let kv = cfg.kv.clone();
        let geo = PlaneGeometry {
            layers: kv.num_layers,
            pages: kv.device_pages,
            page_size: kv.page_size,
            width: kv.width(),
        };
        let planes = BackendRegistry::default()
            .create(backend, geo)
            .ok_or_else(|| EngineError::UnknownBackend(backend.to_string()))?;
        let params = (kind == BackendKind::Value).then(|| {
            let dims = ModelDims {
                num_layers: kv.num_layers,
                num_heads: kv.num_heads,
                head_dim: kv.head_dim,
                vocab_size: cfg.model.vocab_size,
            };
            ModelParams::seeded(dims, cfg.model.seed)
        });
        Ok(Self {
            mgr: CacheManager::new(kv.clone(), planes),
            pipe: Pipeline::new(kv, cfg.cost.clone(), record_events),
            cfg,
            mode,
            backend: kind,
            backend_name: backend.to_string(),
            now: 0.0,
            params,
            histories: HashMap::new(),
            outputs: Vec::new(),
            hits: HitAccumulator::default(),
            tokens_processed: 0,
            step_sums: [0.0; 9],
            wait_sum: 0.0,
            comp_sum: 0.0,
            requests: 0,
            batches: 0,
            rejected: 0,
        })
    }

    pub fn manager(&self) -> &CacheManager {
        &self.mgr
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipe
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn outputs(&self) -> &[RequestOutput] {
        &self.outputs
    }

    pub fn mode_name(&self) -> &'static str {
        self.mode.name()
    }

    fn validate(&self, r: &Request) -> Result<(), EngineError> {
        let bad = |msg: String| EngineError::BadRequest {
            user: r.user,
            ts: r.timestamp,
            msg,
        };
        if r.num_candidates == 0 {
            return Err(bad("at least one candidate is required".into()));
        }
        if self.backend == BackendKind::Value {
            let t = r
                .tokens
                .as_ref()
                .ok_or_else(|| bad("value backend needs token ids".into()))?;
            if t.new_tokens.len() != r.delta_len || t.candidates.len() != r.num_candidates {
                return Err(bad("token lists disagree with counts".into()));
            }
            let vocab = self.cfg.model.vocab_size;
            if let Some(&x) = t
                .new_tokens
                .iter()
                .chain(&t.candidates)
                .find(|&&x| x as usize >= vocab)
            {
                return Err(bad(format!("token {x} outside vocabulary of size {vocab}")));
            }
        }
        Ok(())
    }

    /// Serves one batch. A batch that cannot be admitted even after waiting
    /// for in-flight offloads is rejected and leaves the cache untouched.
    pub fn submit_batch(&mut self, batch: &[Request]) -> Result<BatchOutcome, EngineError> {
        for r in batch {
            self.validate(r)?;
        }
        let mut t0 = self
            .now
            .max(batch.iter().map(|r| r.timestamp as f64).fold(0.0, f64::max));
        self.pipe.complete_until(&mut self.mgr, t0)?;
        let meta = loop {
            match self.mgr.prepare_metadata(batch, self.mode.as_ref()) {
                Ok(m) => break m,
                Err(CacheError::Unsatisfiable { .. }) if self.pipe.offloads_in_flight() > 0 => {
                    let t = self.pipe.next_completion().expect("offload pending");
                    t0 = t0.max(t);
                    self.pipe.complete_next(&mut self.mgr)?;
                }
                Err(CacheError::Unsatisfiable { .. } | CacheError::OnloadTooLarge { .. }) => {
                    self.now = t0;
                    self.rejected += 1;
                    return Ok(BatchOutcome::Rejected);
                }
                Err(e) => return Err(e.into()),
            }
        };
        let (steps, end) = self.schedule(&meta, t0);
        self.execute(
            batch,
            meta,
            t0 + steps[..STEP_INFERENCE + 1].iter().sum::<f64>(),
        )?;
        self.now = end;
        self.batches += 1;
        self.requests += batch.len() as u64;
        for (s, v) in self.step_sums.iter_mut().zip(steps) {
            *s += v;
        }
        Ok(BatchOutcome::Served {
            start: t0,
            end,
            steps,
        })
    }

    /// Charges steps 1-10 on the compute lane and schedules the onload.
    fn schedule(&mut self, meta: &BatchMetadata, t0: f64) -> ([f64; 9], f64) {
        let c = &self.cfg.cost;
        let n = meta.plans.len() as f64;
        let cached = self.mode.uses_cache();
        let gate = |x: f64| if cached { x } else { 0.0 };
        let fresh: usize = meta
            .plans
            .iter()
            .map(|p| p.fresh() + p.num_candidates)
            .sum();
        let mut s = [0.0; 9];
        s[0] = gate(c.meta_fixed_ms + c.meta_per_request_ms * n);
        s[1] = gate(c.strip_fixed_ms + c.strip_per_request_ms * n);
        s[2] = c.embed_fixed_ms + c.embed_per_token_ms * fresh as f64;
        s[3] = c.layout_fixed_ms + c.layout_per_token_ms * fresh as f64;
        s[4] = gate(c.await_meta_ms);
        s[5] = gate(c.update_fixed_ms + c.update_per_onload_ms * meta.onload.entries.len() as f64);
        let submit_at = t0 + s[0];
        let commit_at = t0 + s[..6].iter().sum::<f64>();
        let handle = self.pipe.submit_onload(&meta.onload, submit_at, commit_at);

        let c = &self.cfg.cost;
        let lin: Vec<f64> = meta
            .plans
            .iter()
            .map(|p| c.k_lin_ms * (p.fresh() + p.num_candidates) as f64)
            .collect();
        let attn: Vec<f64> = meta
            .plans
            .iter()
            .map(|p| {
                let t = p.total() as f64;
                c.k_attn_ms * (t - p.p_pre as f64) * t
            })
            .collect();
        let pre = c.batched(lin.iter().copied());
        let post = c.batched(attn.iter().copied()) + c.layer_fixed_ms;
        let mut t = commit_at;
        let (mut wait, mut comp) = (0.0, 0.0);
        for l in 0..self.cfg.kv.num_layers {
            let start = t;
            t += pre;
            let w = Pipeline::await_layer(&handle, l, t);
            t += w + post;
            wait += w;
            comp += pre + post;
            self.pipe
                .record(start, t, Lane::Compute, "layer", None, Some(l));
        }
        s[6] = wait + comp;
        self.wait_sum += wait;
        self.comp_sum += comp;
        let c = &self.cfg.cost;
        s[7] = if self.mode.persists_to_host() {
            c.offload_submit_ms
        } else {
            0.0
        };
        s[8] = c.post_fixed_ms + c.post_per_request_ms * n;
        (s, t0 + s.iter().sum::<f64>())
    }

    /// Data path for a prepared batch: onload commit, per-request compute and
    /// append, scratch release, offload submission at `offload_at`.
    fn execute(
        &mut self,
        batch: &[Request],
        mut meta: BatchMetadata,
        offload_at: f64,
    ) -> Result<(), EngineError> {
        let users: Vec<UserId> = meta.plans.iter().map(|p| p.user).collect();
        self.mgr.commit_onload(&users)?;
        self.mgr.update_metadata(&mut meta);
        let layers = self.cfg.kv.num_layers;
        let cached = self.mode.uses_cache();
        for (plan, req) in meta.plans.iter().zip(batch) {
            self.hits.add(plan.history, plan.device_hit, plan.host_hit);
            self.tokens_processed += (plan.fresh() + plan.num_candidates) as u64;
            let fresh = plan.fresh();
            let mut appended: Option<Vec<KvSpan>> = None;
            if let Some(params) = &self.params {
                let toks = req.tokens.as_ref().expect("validated");
                let hist = self.histories.entry(plan.user).or_default();
                let stripped =
                    strip_cached_tokens(hist, &toks.new_tokens, &toks.candidates, plan.p_pre);
                let mut cache = Vec::with_capacity(layers);
                for l in 0..layers {
                    let kv = match self.mgr.read_device(plan.user, l, 0..plan.p_pre)? {
                        KvSpan::Values(kv) => kv,
                        _ => LayerKv::empty(self.cfg.kv.width()),
                    };
                    cache.push(kv);
                }
                let out =
                    forward_incremental(params, &cache, &stripped.fresh, &stripped.candidates)?;
                hist.extend_from_slice(&toks.new_tokens);
                self.outputs.push(RequestOutput {
                    user: plan.user,
                    timestamp: req.timestamp,
                    logits: out.logits,
                });
                appended = Some(
                    out.new_kv
                        .into_iter()
                        .map(|kv| KvSpan::Values(kv.slice(0..fresh)))
                        .collect(),
                );
            }
            if !cached {
                self.mgr.note_history(plan.user, plan.delta);
                continue;
            }
            let start = self.mgr.state(plan.user).map_or(0, |s| s.device_len);
            for l in 0..layers {
                let span = match (&appended, self.backend) {
                    (Some(spans), _) => spans[l].clone(),
                    (None, BackendKind::Tag) => tag_span(plan.user, l, start..start + fresh),
                    _ => KvSpan::Opaque(fresh),
                };
                self.mgr.append_kv(plan.user, l, &span)?;
            }
            self.mgr.finish_append(plan.user, fresh, plan.delta)?;
        }
        self.mgr.release_scratch(&meta)?;
        let mut seen = HashSet::new();
        for &u in &users {
            if !seen.insert(u) {
                continue;
            }
            if !cached {
                self.mgr.discard_user(u)?;
            } else if self.mode.persists_to_host() {
                self.pipe
                    .maybe_trigger_offload(&mut self.mgr, u, offload_at)?;
            }
        }
        Ok(())
    }

    /// Moves simulated time forward, completing offloads due by then.
    pub fn advance_to(&mut self, time: f64) -> Result<(), EngineError> {
        self.now = self.now.max(time);
        self.pipe.complete_until(&mut self.mgr, self.now)?;
        Ok(())
    }

    /// Completes the earliest in-flight offload, if any.
    pub fn complete_next_offload(&mut self) -> Result<bool, EngineError> {
        if let Some(t) = self.pipe.next_completion() {
            self.now = self.now.max(t);
        }
        Ok(self.pipe.complete_next(&mut self.mgr)?.is_some())
    }

    /// Evicts LRU users until `pages` are free or nothing unlocked is left.
    pub fn apply_pressure(&mut self, pages: usize) -> Result<usize, EngineError> {
        Ok(self.mgr.reclaim(pages)?.len())
    }

    /// Completes every pending offload.
    pub fn drain(&mut self) -> Result<(), EngineError> {
        while self.complete_next_offload()? {}
        Ok(())
    }

    /// Structural checks that must hold between any two events.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.mgr.check_accounting()?;
        let q = self.pipe.quota();
        if q.in_flight > q.limit {
            return Err(format!(
                "offload in flight {} exceeds quota {}",
                q.in_flight, q.limit
            ));
        }
        for (u, p) in self.pipe.pinned_pages() {
            if !self.mgr.is_locked(u) {
                return Err(format!("user {u} has offloads in flight but is unlocked"));
            }
            if self.mgr.page_owner(p) != PageOwner::User(u) {
                return Err(format!("page {p} read by an offload of user {u} was freed"));
            }
        }
        for u in self.mgr.users_sorted() {
            if self.mgr.is_locked(u) != (self.pipe.user_in_flight(u) > 0) {
                return Err(format!(
                    "lock state of user {u} disagrees with in-flight offloads"
                ));
            }
        }
        let ps = self.pipe.stats();
        if ps.host_bound_transfers != ps.offload_tasks {
            return Err("host-bound transfer not issued by an offload task".into());
        }
        if self.backend == BackendKind::Tag {
            self.check_conservation()?;
        }
        Ok(())
    }

    /// Tag backend: device pages hold exactly positions `[0, device_len)` and
    /// host chunks exactly `[0, persisted_len)`, per layer and kind.
    pub fn check_conservation(&self) -> Result<(), String> {
        let chunk = self.cfg.kv.chunk_size;
        for u in self.mgr.users_sorted() {
            let st = self.mgr.state(u).expect("listed user");
            for l in 0..self.cfg.kv.num_layers {
                let dev = self
                    .mgr
                    .read_device(u, l, 0..st.device_len)
                    .map_err(|e| e.to_string())?;
                if dev != tag_span(u, l, 0..st.device_len) {
                    return Err(format!(
                        "user {u} layer {l}: device tags differ from [0, {})",
                        st.device_len
                    ));
                }
                for c in 0..st.persisted_len / chunk {
                    let h = self
                        .mgr
                        .host()
                        .read_layer(u, c, l)
                        .map_err(|e| e.to_string())?;
                    if *h != tag_span(u, l, c * chunk..(c + 1) * chunk) {
                        return Err(format!("user {u} layer {l}: host chunk {c} tags wrong"));
                    }
                }
            }
            if self.mgr.host().persisted_len(u) != st.persisted_len {
                return Err(format!("user {u}: persisted_len disagrees with host store"));
            }
        }
        Ok(())
    }

    pub fn report(&self) -> RunReport {
        let mut r = RunReport::empty(self.mode.name(), &self.backend_name, 0);
        let nb = self.batches.max(1) as f64;
        r.steps = STEP_LABELS
            .iter()
            .zip(self.step_sums)
            .map(|(l, s)| StepTime {
                label: l.to_string(),
                ms: s / nb,
            })
            .collect();
        r.requests = self.requests;
        r.batches = self.batches;
        r.rejected_batches = self.rejected;
        r.wait_ms = self.wait_sum / nb;
        r.comp_ms = self.comp_sum / nb;
        r.total_latency_ms = self.step_sums.iter().sum();
        r.avg_latency_ms = r.total_latency_ms / nb;
        r.makespan_ms = self.now;
        let (g, t) = hit_ratios(&self.hits);
        r.gpu_hit_ratio = g;
        r.total_hit_ratio = t;
        r.hits = self.hits;
        r.tokens_processed = self.tokens_processed;
        let ms = self.mgr.stats();
        r.evictions = ms.evictions;
        r.tail_tokens_lost = ms.tail_tokens_lost;
        r.peak_device_pages = ms.peak_pages;
        let ps = self.pipe.stats();
        r.onload_chunks = ps.onload_chunks;
        r.offload_tasks = ps.offload_tasks;
        r.offload_rejections = ps.offload_rejections;
        r.peak_offload_in_flight = self.pipe.quota().peak;
        r
    }
}
