//! Deterministic discrete-event schedule for the transfer lanes.
//!
//! Times are simulated milliseconds. The compute lane is driven by the
//! engine; this module owns the onload, scatter and offload lanes plus the
//! host-side copy worker, and hands out per-layer readiness times.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use serde::Serialize;

use crate::config::KvConfig;
use crate::cost::CostModel;
use crate::manager::{CacheError, CacheManager, OnloadPlan};
use crate::store::ChunkPayload;
use crate::types::{PageId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Lane {
    Compute,
    Onload,
    Scatter,
    Offload,
    /// Host CPU work (pinned-buffer fills and host persists), logged for
    /// inspection but not one of the device lanes.
    Host,
}

/// One scheduled task, as written to the event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineEvent {
    pub time: f64,
    pub end: f64,
    pub lane: Lane,
    pub task: &'static str,
    pub user: Option<UserId>,
    pub layer: Option<usize>,
}

/// A completion event: fired once, at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionEvent {
    pub id: u64,
    pub time: f64,
}

/// Per-layer scatter completion for one batch's onload.
#[derive(Debug, Clone, PartialEq)]
pub struct OnloadHandle {
    pub layers: Vec<CompletionEvent>,
    /// End of the last bus transfer.
    pub transfer_end: f64,
}

impl OnloadHandle {
    pub fn ready(&self, layer: usize) -> f64 {
        self.layers[layer].time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OffloadState {
    Pending,
    Gathering,
    Transferring,
    Persisting,
    Done,
}

#[derive(Debug, Clone)]
pub struct OffloadTask {
    pub user: UserId,
    pub chunk: usize,
    pub pages: Vec<PageId>,
    pub tokens: usize,
    pub state: OffloadState,
    pub payload: ChunkPayload,
    pub done_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OffloadQuota {
    pub limit: usize,
    pub in_flight: usize,
    pub peak: usize,
}

impl OffloadQuota {
    pub fn new(limit: usize) -> Self {
        Self {
            limit,
            in_flight: 0,
            peak: 0,
        }
    }

    pub fn release(&mut self, tokens: usize) {
        self.in_flight -= tokens;
    }
}

pub fn admit_offload(quota: &mut OffloadQuota, tokens: usize) -> bool {
    if quota.in_flight + tokens > quota.limit {
        return false;
    }
    quota.in_flight += tokens;
    quota.peak = quota.peak.max(quota.in_flight);
    true
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PipelineStats {
    pub onload_chunks: u64,
    pub onload_transfers: u64,
    pub offload_tasks: u64,
    pub offload_rejections: u64,
    pub offload_completed: u64,
    /// Host-bound transfers, all issued by offload tasks.
    pub host_bound_transfers: u64,
}

#[derive(Debug)]
pub struct Pipeline {
    kv: KvConfig,
    cost: CostModel,
    host_free: f64,
    buf_free: [f64; 2],
    next_buf: usize,
    bus_free: f64,
    scatter_free: f64,
    offload_free: f64,
    next_event: u64,
    seq: u64,
    quota: OffloadQuota,
    in_flight: HashMap<UserId, usize>,
    pending: BTreeMap<(u64, u64), OffloadTask>,
    log: Option<Vec<PipelineEvent>>,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(kv: KvConfig, cost: CostModel, record_events: bool) -> Self {
        Self {
            quota: OffloadQuota::new(kv.offload_quota),
            kv,
            cost,
            host_free: 0.0,
            buf_free: [0.0; 2],
            next_buf: 0,
            bus_free: 0.0,
            scatter_free: 0.0,
            offload_free: 0.0,
            next_event: 0,
            seq: 0,
            in_flight: HashMap::new(),
            pending: BTreeMap::new(),
            log: record_events.then(Vec::new),
            stats: PipelineStats::default(),
        }
    }

    pub fn quota(&self) -> OffloadQuota {
        self.quota
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    pub fn events(&self) -> &[PipelineEvent] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn offloads_in_flight(&self) -> usize {
        self.pending.len()
    }

    pub fn user_in_flight(&self, user: UserId) -> usize {
        self.in_flight.get(&user).copied().unwrap_or(0)
    }

    /// Time of the earliest pending offload completion.
    pub fn next_completion(&self) -> Option<f64> {
        self.pending.keys().next().map(|(t, _)| f64::from_bits(*t))
    }

    pub fn record(
        &mut self,
        time: f64,
        end: f64,
        lane: Lane,
        task: &'static str,
        user: Option<UserId>,
        layer: Option<usize>,
    ) {
        if let Some(log) = self.log.as_mut() {
            log.push(PipelineEvent {
                time,
                end,
                lane,
                task,
                user,
                layer,
            });
        }
    }

    fn event(&mut self, time: f64) -> CompletionEvent {
        self.next_event += 1;
        CompletionEvent {
            id: self.next_event,
            time,
        }
    }

    /// Schedules the onload of `plan`, layer by layer, one chunk slice at a
    /// time through the two pinned buffers. Scatters cannot start before
    /// `commit_at`, when the destination pages are committed.
    pub fn submit_onload(
        &mut self,
        plan: &OnloadPlan,
        submit_at: f64,
        commit_at: f64,
    ) -> OnloadHandle {
        let layers = self.kv.num_layers;
        if plan.is_empty() {
            let evs = (0..layers).map(|_| self.event(submit_at)).collect();
            return OnloadHandle {
                layers: evs,
                transfer_end: submit_at,
            };
        }
        let bytes = self.kv.chunk_size * self.kv.kv_bytes_per_token_layer();
        let ppc = self.kv.pages_per_chunk();
        let fill = self.cost.host_copy_ms(bytes);
        let tx = self.cost.bus_ms(bytes);
        let scat = self.cost.page_ops_ms(ppc);
        let mut evs = Vec::with_capacity(layers);
        let mut transfer_end = submit_at;
        for l in 0..layers {
            let mut ready = submit_at;
            for e in &plan.entries {
                for _ in 0..e.chunks {
                    let b = self.next_buf;
                    self.next_buf = 1 - b;
                    let fs = submit_at.max(self.host_free).max(self.buf_free[b]);
                    let fe = fs + fill;
                    self.host_free = fe;
                    let ts = fe.max(self.bus_free);
                    let te = ts + tx;
                    self.bus_free = te;
                    self.buf_free[b] = te;
                    let ss = te.max(self.scatter_free).max(commit_at);
                    let se = ss + scat;
                    self.scatter_free = se;
                    ready = ready.max(se);
                    transfer_end = transfer_end.max(te);
                    self.stats.onload_transfers += 1;
                    self.record(fs, fe, Lane::Host, "fill", Some(e.user), Some(l));
                    self.record(ts, te, Lane::Onload, "h2d", Some(e.user), Some(l));
                    self.record(ss, se, Lane::Scatter, "scatter", Some(e.user), Some(l));
                }
            }
            let ev = self.event(ready);
            evs.push(ev);
        }
        self.stats.onload_chunks += plan.total_chunks() as u64;
        OnloadHandle {
            layers: evs,
            transfer_end,
        }
    }

    /// Stall of the compute lane, ready at `ready`, on layer `layer`.
    pub fn await_layer(handle: &OnloadHandle, layer: usize, ready: f64) -> f64 {
        (handle.ready(layer) - ready).max(0.0)
    }

    /// Submits one task per whole chunk the user has on device but not on
    /// host (or in flight), stopping at the first quota rejection. Returns
    /// the number of tasks submitted.
    pub fn maybe_trigger_offload(
        &mut self,
        mgr: &mut CacheManager,
        user: UserId,
        now: f64,
    ) -> Result<usize, CacheError> {
        let Some(st) = mgr.state(user) else {
            return Ok(0);
        };
        let chunk = self.kv.chunk_size;
        let mut submitted = 0;
        loop {
            let flying = self.user_in_flight(user);
            let next = st.persisted_len / chunk + flying;
            if st.device_len < (next + 1) * chunk {
                break;
            }
            if !admit_offload(&mut self.quota, chunk) {
                self.stats.offload_rejections += 1;
                break;
            }
            if flying == 0 {
                mgr.lock_user(user)?;
            }
            let (payload, pages) = mgr.snapshot_chunk(user, next)?;
            *self.in_flight.entry(user).or_default() += 1;

            let layers = self.kv.num_layers;
            let bytes = chunk * self.kv.kv_bytes_per_token_layer() * layers;
            let gs = now.max(self.offload_free);
            let ge = gs + self.cost.page_ops_ms(pages.len() * layers);
            let te = ge + self.cost.bus_ms(bytes);
            self.offload_free = te;
            let pe = te + self.cost.host_copy_ms(bytes);
            self.record(gs, ge, Lane::Offload, "gather", Some(user), None);
            self.record(ge, te, Lane::Offload, "d2h", Some(user), None);
            self.record(te, pe, Lane::Host, "persist", Some(user), None);
            self.stats.host_bound_transfers += 1;
            self.stats.offload_tasks += 1;

            self.seq += 1;
            self.pending.insert(
                (pe.to_bits(), self.seq),
                OffloadTask {
                    user,
                    chunk: next,
                    pages,
                    tokens: chunk,
                    state: OffloadState::Persisting,
                    payload,
                    done_at: pe,
                },
            );
            submitted += 1;
        }
        Ok(submitted)
    }

    /// Completes the earliest pending offload.
    pub fn complete_next(
        &mut self,
        mgr: &mut CacheManager,
    ) -> Result<Option<OffloadTask>, CacheError> {
        let Some((&key, _)) = self.pending.iter().next() else {
            return Ok(None);
        };
        let mut task = self.pending.remove(&key).expect("key present");
        mgr.persist_chunk(
            task.user,
            task.chunk,
            std::mem::replace(&mut task.payload, ChunkPayload { layers: Vec::new() }),
        )?;
        self.quota.release(task.tokens);
        let n = self
            .in_flight
            .get_mut(&task.user)
            .expect("task user in flight");
        *n -= 1;
        if *n == 0 {
            self.in_flight.remove(&task.user);
            mgr.unlock_user(task.user)?;
        }
        task.state = OffloadState::Done;
        self.stats.offload_completed += 1;
        Ok(Some(task))
    }

    /// Completes every offload finishing at or before `time`.
    pub fn complete_until(
        &mut self,
        mgr: &mut CacheManager,
        time: f64,
    ) -> Result<usize, CacheError> {
        let mut n = 0;
        while self.next_completion().is_some_and(|t| t <= time) {
            self.complete_next(mgr)?;
            n += 1;
        }
        Ok(n)
    }

    /// Pages read by in-flight offload tasks.
    pub fn pinned_pages(&self) -> impl Iterator<Item = (UserId, PageId)> + '_ {
        self.pending
            .values()
            .flat_map(|t| t.pages.iter().map(move |p| (t.user, *p)))
    }

    pub fn write_events(&self, out: &mut impl Write) -> io::Result<()> {
        for e in self.events() {
            serde_json::to_writer(&mut *out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manager::OnloadEntry;

    fn kv(layers: usize) -> KvConfig {
        KvConfig {
            num_layers: layers,
            num_heads: 1,
            head_dim: 1,
            page_size: 4,
            chunk_size: 8,
            device_pages: 64,
            onload_pages: 64,
            bytes_per_element: 1,
            offload_quota: 16,
            host_capacity: 0,
        }
    }

    /// Transfers dominate: fill 1 ms, bus 2 ms, scatter 0.5 ms per slice.
    fn slow_bus() -> CostModel {
        CostModel {
            bus_gbps: 16.0 / 2.0e6,
            tx_setup_us: 0.0,
            host_copy_gbps: 16.0 / 1.0e6,
            page_op_us: 250.0,
            ..CostModel::default()
        }
    }

    fn plan(chunks: usize) -> OnloadPlan {
        OnloadPlan {
            entries: vec![OnloadEntry {
                user: 1,
                chunks,
                tokens: chunks * 8,
            }],
        }
    }

    #[test]
    fn quota_examples() {
        let mut q = OffloadQuota::new(4096);
        assert!(admit_offload(&mut q, 1024));
        q.in_flight = 3584;
        assert!(!admit_offload(&mut q, 1024));
        assert_eq!(q.in_flight, 3584);
    }

    #[test]
    fn empty_plan_is_prefired() {
        let mut p = Pipeline::new(kv(3), CostModel::default(), true);
        let h = p.submit_onload(&OnloadPlan::default(), 5.0, 9.0);
        assert!(h.layers.iter().all(|e| e.time == 5.0));
        assert!(p.events().is_empty());
        assert_eq!(Pipeline::await_layer(&h, 2, 6.0), 0.0);
    }

    #[test]
    fn single_chunk_sequence_per_layer() {
        let mut p = Pipeline::new(kv(2), slow_bus(), true);
        let h = p.submit_onload(&plan(1), 0.0, 0.0);
        let tasks: Vec<_> = p.events().iter().map(|e| (e.task, e.layer)).collect();
        assert_eq!(
            tasks,
            vec![
                ("fill", Some(0)),
                ("h2d", Some(0)),
                ("scatter", Some(0)),
                ("fill", Some(1)),
                ("h2d", Some(1)),
                ("scatter", Some(1))
            ]
        );
        // layer 0: fill 0..1, bus 1..3, scatter 3..3.5
        assert!((h.ready(0) - 3.5).abs() < 1e-9);
        // layer 1: fill 1..2 in the other buffer, bus 3..5, scatter 5..5.5
        assert!((h.ready(1) - 5.5).abs() < 1e-9);
        assert!(h.ready(0) <= h.ready(1));
    }

    #[test]
    fn four_chunks_overlap_fill_and_transfer() {
        let mut p = Pipeline::new(kv(1), slow_bus(), true);
        p.submit_onload(&plan(4), 0.0, 0.0);
        let ev = p.events();
        let fills: Vec<_> = ev.iter().filter(|e| e.task == "fill").collect();
        let txs: Vec<_> = ev.iter().filter(|e| e.task == "h2d").collect();
        for w in txs.windows(2) {
            assert!(w[1].time >= w[0].end - 1e-12, "bus transfers overlap");
        }
        for w in fills.windows(2) {
            assert!(w[1].time >= w[0].end - 1e-12, "fills overlap");
        }
        // fill of chunk k+1 runs while chunk k is on the bus
        for k in 0..3 {
            assert!(fills[k + 1].time < txs[k].end && fills[k + 1].end > txs[k].time);
        }
        // a buffer is refilled only after its previous transfer left
        for k in 2..4 {
            assert!(fills[k].time >= txs[k - 2].end - 1e-12);
        }
    }

    #[test]
    fn scatter_waits_for_commit() {
        let mut p = Pipeline::new(kv(1), slow_bus(), false);
        let h = p.submit_onload(&plan(1), 0.0, 10.0);
        assert!((h.ready(0) - 10.5).abs() < 1e-9);
    }

    #[test]
    fn two_layer_wait_closed_form() {
        // compute per layer is c, transfers per layer t >> c
        let mut p = Pipeline::new(kv(2), slow_bus(), false);
        let h = p.submit_onload(&plan(1), 0.0, 0.0);
        let c = 0.25;
        let mut t = 0.0;
        let mut wait = 0.0;
        for l in 0..2 {
            let w = Pipeline::await_layer(&h, l, t);
            wait += w;
            t += w + c;
        }
        // the last layer is ready at 5.5; compute issued 2c of it, the last c after
        assert!((wait - (5.5 - c)).abs() < 1e-9);
        assert!((t - 5.75).abs() < 1e-9);
    }
}
