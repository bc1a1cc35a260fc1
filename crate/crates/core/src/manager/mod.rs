//! Control plane: sequence lengths, page tables, allocation with LRU
//! eviction, and the user lock registry.

mod locks;
mod lru;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

pub use locks::LockRegistry;
pub use lru::LruIndex;

use crate::config::KvConfig;
use crate::mode::ServingMode;
use crate::store::{
    ChunkPayload, DevicePagedStore, HostChunkedStore, KvSpan, OnloadBuffer, PagePlanes,
    PinnedBufferPair, PlaneGeometry, StoreError,
};
use crate::types::{pages_needed, ChunkId, PageId, Request, SequenceState, TokenId, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("batch needs {need} pages but only {available} can be made free")]
    Unsatisfiable { need: usize, available: usize },
    #[error("batch onloads {need} tokens, onload buffer holds {capacity}")]
    OnloadTooLarge { need: usize, capacity: usize },
    #[error("user {0} is locked")]
    Locked(UserId),
    #[error("user {0} is already locked")]
    AlreadyLocked(UserId),
    #[error("user {0} is not locked")]
    NotLocked(UserId),
    #[error("user {0} is not resident on device")]
    NotResident(UserId),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Owner of a physical page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageOwner {
    Free,
    User(UserId),
    /// Candidate scratch space, freed when the batch finishes.
    Scratch,
}

#[derive(Debug, Clone, Default)]
struct UserEntry {
    state: SequenceState,
    pages: Vec<PageId>,
    /// Host tokens planned for onload and not yet committed.
    pending_onload: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvictionRecord {
    pub user: UserId,
    pub pages_freed: usize,
    pub device_len: usize,
    pub persisted_len: usize,
    /// Device-only tokens that no tier holds any more.
    pub tail_lost: usize,
}

/// Everything the compute path needs for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestPlan {
    pub user: UserId,
    /// History length before this request.
    pub history: usize,
    /// Reusable prefix `P_pre`.
    pub p_pre: usize,
    pub device_hit: usize,
    pub host_hit: usize,
    /// History tokens past `p_pre` that must be re-encoded.
    pub tail: usize,
    pub delta: usize,
    pub num_candidates: usize,
    pub scratch_pages: Vec<PageId>,
    /// Same user appeared earlier in this batch.
    pub repeat: bool,
}

impl RequestPlan {
    /// Positions computed from scratch, excluding candidates.
    pub fn fresh(&self) -> usize {
        self.tail + self.delta
    }

    /// Sequence length `T` seen by attention.
    pub fn total(&self) -> usize {
        self.history + self.delta + self.num_candidates
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnloadEntry {
    pub user: UserId,
    pub chunks: usize,
    pub tokens: usize,
}

/// Host chunks to fetch for one batch; the same list applies to every layer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OnloadPlan {
    pub entries: Vec<OnloadEntry>,
}

impl OnloadPlan {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_chunks(&self) -> usize {
        self.entries.iter().map(|e| e.chunks).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchMetadata {
    pub plans: Vec<RequestPlan>,
    pub onload: OnloadPlan,
    pub evictions: Vec<EvictionRecord>,
    /// Jagged offsets of the fresh inputs (fresh tokens plus candidates) per request.
    pub offsets: Vec<usize>,
    /// Per request, the history length once the request's tokens are appended.
    pub total_lengths: Vec<usize>,
}

/// Inputs that still need fresh encoding once `p_pre` history tokens are cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrippedRequest {
    /// Lost tail of the history followed by the new tokens.
    pub fresh: Vec<TokenId>,
    pub candidates: Vec<TokenId>,
}

pub fn strip_cached_tokens(
    history: &[TokenId],
    new_tokens: &[TokenId],
    candidates: &[TokenId],
    p_pre: usize,
) -> StrippedRequest {
    assert!(p_pre <= history.len(), "cached prefix longer than history");
    let mut fresh = history[p_pre..].to_vec();
    fresh.extend_from_slice(new_tokens);
    StrippedRequest {
        fresh,
        candidates: candidates.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ManagerStats {
    pub evictions: u64,
    pub tail_tokens_lost: u64,
    pub pages_allocated: u64,
    pub peak_pages: usize,
}

/// Per-user page map for debugging dumps.
#[derive(Debug, Clone, Serialize)]
pub struct PageMapEntry {
    pub pages: Vec<PageId>,
    pub chunks: Vec<ChunkId>,
    pub last_page_len: usize,
    pub device_len: usize,
    pub persisted_len: usize,
    pub total_len: usize,
    pub locked: bool,
}

#[derive(Debug)]
pub struct CacheManager {
    cfg: KvConfig,
    users: HashMap<UserId, UserEntry>,
    lru: LruIndex,
    locks: LockRegistry,
    store: DevicePagedStore,
    host: HostChunkedStore,
    onload_buffer: OnloadBuffer,
    pinned: PinnedBufferPair,
    owners: Vec<PageOwner>,
    clock: u64,
    stats: ManagerStats,
    eviction_log: Vec<EvictionRecord>,
}

impl CacheManager {
    pub fn new(cfg: KvConfig, planes: Box<dyn PagePlanes>) -> Self {
        let geo = PlaneGeometry {
            layers: cfg.num_layers,
            pages: cfg.device_pages,
            page_size: cfg.page_size,
            width: cfg.width(),
        };
        let store = DevicePagedStore::new(geo, planes);
        let empty = store.empty_span();
        Self {
            host: HostChunkedStore::new(cfg.chunk_size, cfg.num_layers, cfg.host_capacity),
            onload_buffer: OnloadBuffer::new(
                cfg.onload_pages,
                cfg.page_size,
                empty,
                cfg.num_layers,
            ),
            pinned: PinnedBufferPair::new(cfg.chunk_size),
            owners: vec![PageOwner::Free; cfg.device_pages],
            store,
            cfg,
            users: HashMap::new(),
            lru: LruIndex::new(),
            locks: LockRegistry::default(),
            clock: 0,
            stats: ManagerStats::default(),
            eviction_log: Vec::new(),
        }
    }

    pub fn config(&self) -> &KvConfig {
        &self.cfg
    }

    pub fn store(&self) -> &DevicePagedStore {
        &self.store
    }

    pub fn host(&self) -> &HostChunkedStore {
        &self.host
    }

    pub fn stats(&self) -> ManagerStats {
        self.stats
    }

    pub fn lru(&self) -> &LruIndex {
        &self.lru
    }

    pub fn eviction_log(&self) -> &[EvictionRecord] {
        &self.eviction_log
    }

    pub fn page_owner(&self, page: PageId) -> PageOwner {
        self.owners[page as usize]
    }

    pub fn state(&self, user: UserId) -> Option<SequenceState> {
        self.users.get(&user).map(|e| SequenceState {
            locked: self.locks.is_locked(user),
            ..e.state
        })
    }

    pub fn pages(&self, user: UserId) -> &[PageId] {
        self.users
            .get(&user)
            .map(|e| e.pages.as_slice())
            .unwrap_or(&[])
    }

    /// Tokens held by the user's last page, 0 if none.
    pub fn last_page_len(&self, user: UserId) -> usize {
        let Some(e) = self.users.get(&user) else {
            return 0;
        };
        match e.state.device_len {
            0 => 0,
            n => n - (pages_needed(n, self.cfg.page_size) - 1) * self.cfg.page_size,
        }
    }

    pub fn is_locked(&self, user: UserId) -> bool {
        self.locks.is_locked(user)
    }

    pub fn users_sorted(&self) -> Vec<UserId> {
        let mut v: Vec<_> = self.users.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Reusable prefix length per user; 0 for unknown users.
    pub fn get_total_cache_length(&self, users: &[UserId]) -> Vec<usize> {
        users
            .iter()
            .map(|u| self.users.get(u).map_or(0, |e| e.state.reusable_len()))
            .collect()
    }

    fn alloc_page(&mut self, owner: PageOwner) -> Option<PageId> {
        let p = self.store.alloc()?;
        self.owners[p as usize] = owner;
        self.stats.pages_allocated += 1;
        self.stats.peak_pages = self.stats.peak_pages.max(self.store.used_count());
        Some(p)
    }

    fn release_page(&mut self, page: PageId) -> Result<(), CacheError> {
        self.store.release(page)?;
        self.owners[page as usize] = PageOwner::Free;
        Ok(())
    }

    /// Drops the user's device pages without moving any data. Whatever was
    /// only on device (beyond the persisted prefix) is lost.
    pub fn evict_user(&mut self, user: UserId) -> Result<Vec<PageId>, CacheError> {
        if self.locks.is_locked(user) {
            return Err(CacheError::Locked(user));
        }
        let entry = self
            .users
            .get_mut(&user)
            .ok_or(CacheError::UnknownUser(user))?;
        let pages = std::mem::take(&mut entry.pages);
        let record = EvictionRecord {
            user,
            pages_freed: pages.len(),
            device_len: entry.state.device_len,
            persisted_len: entry.state.persisted_len,
            tail_lost: entry
                .state
                .device_len
                .saturating_sub(entry.state.persisted_len),
        };
        entry.state.device_len = 0;
        entry.pending_onload = 0;
        for &p in &pages {
            self.release_page(p)?;
        }
        self.lru.remove(user);
        self.stats.evictions += 1;
        self.stats.tail_tokens_lost += record.tail_lost as u64;
        self.eviction_log.push(record);
        Ok(pages)
    }

    fn evict_one(
        &mut self,
        pinned: &HashSet<UserId>,
    ) -> Result<Option<EvictionRecord>, CacheError> {
        let (locks, users) = (&self.locks, &self.users);
        let skip =
            |u: UserId| locks.is_locked(u) || pinned.contains(&u) || users[&u].pages.is_empty();
        let Some(victim) = self.lru.victim(skip) else {
            return Ok(None);
        };
        self.evict_user(victim)?;
        Ok(self.eviction_log.last().cloned())
    }

    /// Evicts least recently used unlocked users until `pages` are free.
    /// Returns the evictions performed; stops early if nothing is evictable.
    pub fn reclaim(&mut self, pages: usize) -> Result<Vec<EvictionRecord>, CacheError> {
        let mut out = Vec::new();
        let none = HashSet::new();
        while self.store.free_count() < pages {
            match self.evict_one(&none)? {
                Some(r) => out.push(r),
                None => break,
            }
        }
        Ok(out)
    }

    fn evictable_pages(&self, pinned: &HashSet<UserId>) -> usize {
        self.lru
            .iter_lru()
            .filter(|u| !self.locks.is_locked(*u) && !pinned.contains(u))
            .map(|u| self.users[&u].pages.len())
            .sum()
    }

    /// Resolves reusable prefixes, plans onloads and allocates every page the
    /// batch will write, evicting LRU victims as needed. Either the whole
    /// batch is admitted or nothing changes.
    pub fn prepare_metadata(
        &mut self,
        batch: &[Request],
        mode: &dyn ServingMode,
    ) -> Result<BatchMetadata, CacheError> {
        let ps = self.cfg.page_size;
        let in_batch: HashSet<UserId> = batch.iter().map(|r| r.user).collect();

        // dry run for admission
        let mut virt: HashMap<UserId, (usize, usize)> = HashMap::new(); // user -> (history, pages held)
        let mut need_pages = 0usize;
        let mut onload_tokens = 0usize;
        for r in batch {
            let (history, held) = match virt.get(&r.user) {
                Some(&v) => v,
                None => {
                    let st = self.users.get(&r.user).map(|e| e.state).unwrap_or_default();
                    let reuse = mode.resolve(&st);
                    onload_tokens += reuse.host;
                    let held = if reuse.device > 0 {
                        self.pages(r.user).len()
                    } else {
                        0
                    };
                    (st.total_len, held)
                }
            };
            let after = history + r.delta_len;
            let want = pages_needed(after, ps);
            need_pages += want.saturating_sub(held) + pages_needed(r.num_candidates, ps);
            virt.insert(r.user, (after, want.max(held)));
        }
        // pages of batch users that resolve to no device reuse get dropped first
        let reclaimable_own: usize = in_batch
            .iter()
            .filter_map(|u| self.users.get(u).map(|e| (u, e)))
            .filter(|(u, e)| {
                !e.pages.is_empty()
                    && mode.resolve(&e.state).device == 0
                    && !self.locks.is_locked(**u)
            })
            .map(|(_, e)| e.pages.len())
            .sum();
        let available = self.store.free_count() + self.evictable_pages(&in_batch) + reclaimable_own;
        if need_pages > available {
            return Err(CacheError::Unsatisfiable {
                need: need_pages,
                available,
            });
        }
        if onload_tokens > self.onload_buffer.capacity_tokens() {
            return Err(CacheError::OnloadTooLarge {
                need: onload_tokens,
                capacity: self.onload_buffer.capacity_tokens(),
            });
        }

        let log_start = self.eviction_log.len();
        let mut meta = BatchMetadata::default();
        let mut seen: HashMap<UserId, usize> = HashMap::new(); // user -> history after last occurrence
        for r in batch {
            self.clock += 1;
            self.lru.touch(r.user);
            let entry = self.users.entry(r.user).or_default();
            entry.state.last_access = self.clock;

            let plan_prefix = match seen.get(&r.user) {
                Some(&history) if mode.uses_cache() => (history, history, 0, true),
                Some(&history) => (history, 0, 0, true),
                None => {
                    let reuse = mode.resolve(&entry.state);
                    if reuse.device == 0 && !entry.pages.is_empty() && !self.locks.is_locked(r.user)
                    {
                        // stale device copy the mode will not reuse
                        let stale = std::mem::take(&mut entry.pages);
                        entry.state.device_len = 0;
                        for p in stale {
                            self.release_page(p)?;
                        }
                    }
                    let entry = self.users.get_mut(&r.user).expect("entry exists");
                    entry.pending_onload = reuse.host;
                    if reuse.host > 0 {
                        meta.onload.entries.push(OnloadEntry {
                            user: r.user,
                            chunks: reuse.host / self.cfg.chunk_size,
                            tokens: reuse.host,
                        });
                    }
                    (entry.state.total_len, reuse.device, reuse.host, false)
                }
            };
            let (history, device_hit, host_hit, repeat) = plan_prefix;
            let after = history + r.delta_len;

            let want = pages_needed(after, ps);
            while self.pages(r.user).len() < want {
                let page = self.alloc_or_evict(&in_batch, PageOwner::User(r.user))?;
                self.users
                    .get_mut(&r.user)
                    .expect("entry exists")
                    .pages
                    .push(page);
            }
            let mut scratch = Vec::with_capacity(pages_needed(r.num_candidates, ps));
            for _ in 0..pages_needed(r.num_candidates, ps) {
                scratch.push(self.alloc_or_evict(&in_batch, PageOwner::Scratch)?);
            }
            let p_pre = device_hit + host_hit;
            meta.plans.push(RequestPlan {
                user: r.user,
                history,
                p_pre,
                device_hit,
                host_hit,
                tail: history - p_pre,
                delta: r.delta_len,
                num_candidates: r.num_candidates,
                scratch_pages: scratch,
                repeat,
            });
            seen.insert(r.user, after);
        }
        meta.evictions = self.eviction_log[log_start..].to_vec();
        Ok(meta)
    }

    fn alloc_or_evict(
        &mut self,
        pinned: &HashSet<UserId>,
        owner: PageOwner,
    ) -> Result<PageId, CacheError> {
        loop {
            if let Some(p) = self.alloc_page(owner) {
                return Ok(p);
            }
            if self.evict_one(pinned)?.is_none() {
                return Err(CacheError::Unsatisfiable {
                    need: 1,
                    available: 0,
                });
            }
        }
    }

    /// Fills in jagged offsets and post-append history lengths. Candidate
    /// positions are not counted into the persistent history.
    pub fn update_metadata(&self, meta: &mut BatchMetadata) {
        meta.offsets.clear();
        meta.total_lengths.clear();
        let mut off = 0;
        meta.offsets.push(0);
        for p in &meta.plans {
            off += p.fresh() + p.num_candidates;
            meta.offsets.push(off);
            meta.total_lengths.push(p.history + p.delta);
        }
    }

    /// Moves each pending user's host chunks through the pinned buffers into
    /// the onload buffer and scatters them into the user's pages, layer by
    /// layer. Afterwards `device_len` equals the onloaded prefix. Users with
    /// nothing pending are skipped.
    pub fn commit_onload(&mut self, users: &[UserId]) -> Result<usize, CacheError> {
        let mut pending: Vec<(UserId, usize)> = Vec::new();
        for &u in users {
            if let Some(e) = self.users.get(&u) {
                if e.pending_onload > 0 && !pending.iter().any(|(p, _)| *p == u) {
                    pending.push((u, e.pending_onload));
                }
            }
        }
        if pending.is_empty() {
            return Ok(0);
        }
        let chunk = self.cfg.chunk_size;
        let ps = self.cfg.page_size;
        self.onload_buffer.clear();
        for layer in 0..self.cfg.num_layers {
            let mut regions = Vec::with_capacity(pending.len());
            for &(u, tokens) in &pending {
                let start = self.onload_buffer.used(layer);
                for c in 0..tokens / chunk {
                    let slice = self.host.read_layer(u, c, layer)?.clone();
                    let idx = self.pinned.fill(slice)?;
                    self.pinned.begin_transfer(idx)?;
                    let arrived = self.pinned.finish_transfer(idx)?;
                    self.onload_buffer.stage(layer, &arrived)?;
                }
                regions.push((u, start..start + tokens));
            }
            for (u, range) in regions {
                let span = self.onload_buffer.view(layer, range.clone());
                let n = pages_needed(range.len(), ps);
                let pages = self.users[&u].pages[..n].to_vec();
                self.store.scatter(layer, &span, &pages)?;
            }
        }
        for &(u, tokens) in &pending {
            let e = self.users.get_mut(&u).expect("pending user exists");
            e.state.device_len = tokens;
            e.pending_onload = 0;
        }
        Ok(pending.len())
    }

    /// Gathers positions `range` of the user's device sequence for `layer`.
    pub fn read_device(
        &self,
        user: UserId,
        layer: usize,
        range: std::ops::Range<usize>,
    ) -> Result<KvSpan, CacheError> {
        Ok(self.store.read_range(layer, self.pages(user), range)?)
    }

    /// Writes `span` for `layer` at the user's current `device_len`.
    pub fn append_kv(
        &mut self,
        user: UserId,
        layer: usize,
        span: &KvSpan,
    ) -> Result<(), CacheError> {
        let e = self.users.get(&user).ok_or(CacheError::UnknownUser(user))?;
        let start = e.state.device_len;
        let pages = e.pages.clone();
        self.store.write_at(layer, &pages, start, span)?;
        Ok(())
    }

    /// Advances lengths after every layer has been appended.
    pub fn finish_append(
        &mut self,
        user: UserId,
        fresh: usize,
        delta: usize,
    ) -> Result<(), CacheError> {
        let e = self
            .users
            .get_mut(&user)
            .ok_or(CacheError::UnknownUser(user))?;
        e.state.device_len += fresh;
        e.state.total_len += delta;
        debug_assert_eq!(e.state.device_len, e.state.total_len);
        Ok(())
    }

    /// Frees the user's pages without counting an eviction. Used by modes
    /// that drop device state after every request.
    pub fn discard_user(&mut self, user: UserId) -> Result<(), CacheError> {
        let Some(e) = self.users.get_mut(&user) else {
            return Ok(());
        };
        let pages = std::mem::take(&mut e.pages);
        e.state.device_len = 0;
        e.pending_onload = 0;
        for p in pages {
            self.release_page(p)?;
        }
        self.lru.remove(user);
        Ok(())
    }

    /// Records history growth for a mode that keeps no cache.
    pub fn note_history(&mut self, user: UserId, delta: usize) {
        self.users.entry(user).or_default().state.total_len += delta;
    }

    pub fn release_scratch(&mut self, meta: &BatchMetadata) -> Result<(), CacheError> {
        for p in meta.plans.iter().flat_map(|p| &p.scratch_pages) {
            self.release_page(*p)?;
        }
        Ok(())
    }

    pub fn lock_user(&mut self, user: UserId) -> Result<(), CacheError> {
        let resident = self
            .users
            .get(&user)
            .is_some_and(|e| e.state.device_len > 0);
        if !resident {
            return Err(CacheError::NotResident(user));
        }
        self.locks.lock(user)
    }

    pub fn unlock_user(&mut self, user: UserId) -> Result<(), CacheError> {
        self.locks.unlock(user)
    }

    /// Reads chunk `index` of the user's device sequence for every layer, plus
    /// the pages it came from.
    pub fn snapshot_chunk(
        &self,
        user: UserId,
        index: usize,
    ) -> Result<(ChunkPayload, Vec<PageId>), CacheError> {
        let chunk = self.cfg.chunk_size;
        let e = self.users.get(&user).ok_or(CacheError::UnknownUser(user))?;
        if (index + 1) * chunk > e.state.device_len {
            return Err(CacheError::Store(StoreError::InsufficientPages {
                need: (index + 1) * chunk,
                have: e.state.device_len,
            }));
        }
        let ppc = self.cfg.pages_per_chunk();
        let pages = e.pages[index * ppc..(index + 1) * ppc].to_vec();
        let layers = (0..self.cfg.num_layers)
            .map(|l| self.store.gather(l, &pages, chunk))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((ChunkPayload { layers }, pages))
    }

    /// Stores an offloaded chunk on the host tier and advances `persisted_len`.
    pub fn persist_chunk(
        &mut self,
        user: UserId,
        index: usize,
        payload: ChunkPayload,
    ) -> Result<(), CacheError> {
        self.host.write_chunks(user, index, vec![payload])?;
        let persisted = self.host.persisted_len(user);
        let e = self
            .users
            .get_mut(&user)
            .ok_or(CacheError::UnknownUser(user))?;
        e.state.persisted_len = persisted;
        Ok(())
    }

    pub fn page_map(&self) -> BTreeMap<UserId, PageMapEntry> {
        self.users_sorted()
            .into_iter()
            .map(|u| {
                let e = &self.users[&u];
                (
                    u,
                    PageMapEntry {
                        pages: e.pages.clone(),
                        chunks: self.host.chunk_ids(u).to_vec(),
                        last_page_len: self.last_page_len(u),
                        device_len: e.state.device_len,
                        persisted_len: e.state.persisted_len,
                        total_len: e.state.total_len,
                        locked: self.locks.is_locked(u),
                    },
                )
            })
            .collect()
    }

    /// Page-table consistency: ownership matches the per-user lists, each page
    /// has exactly one owner, and used + free = capacity.
    pub fn check_accounting(&self) -> Result<(), String> {
        let mut owned = vec![false; self.cfg.device_pages];
        let mut user_pages = 0;
        for u in self.users_sorted() {
            let e = &self.users[&u];
            if e.pages.len() < pages_needed(e.state.device_len, self.cfg.page_size) {
                return Err(format!(
                    "user {u}: {} pages for {} tokens",
                    e.pages.len(),
                    e.state.device_len
                ));
            }
            for &p in &e.pages {
                if std::mem::replace(&mut owned[p as usize], true) {
                    return Err(format!("page {p} listed twice"));
                }
                if self.owners[p as usize] != PageOwner::User(u) {
                    return Err(format!("page {p} owner mismatch for user {u}"));
                }
            }
            user_pages += e.pages.len();
        }
        let scratch = self
            .owners
            .iter()
            .filter(|o| **o == PageOwner::Scratch)
            .count();
        for &p in self.store.free_pages() {
            if std::mem::replace(&mut owned[p as usize], true) {
                return Err(format!("free page {p} also owned"));
            }
        }
        let total = user_pages + scratch + self.store.free_count();
        if total != self.cfg.device_pages {
            return Err(format!(
                "accounting: {user_pages} user + {scratch} scratch + {} free != {}",
                self.store.free_count(),
                self.cfg.device_pages
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
