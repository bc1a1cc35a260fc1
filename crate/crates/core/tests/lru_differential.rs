use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tierkv::config::{KvConfig, RunConfig};
use tierkv::engine::{BatchOutcome, Engine};
use tierkv::manager::LruIndex;
use tierkv::mode::GpuOnly;
use tierkv::types::{pages_needed, Request, UserId};

/// Recency list as a plain vector, least recent first.
#[derive(Default)]
struct NaiveLru {
    order: Vec<UserId>,
}

impl NaiveLru {
    fn touch(&mut self, u: UserId) {
        self.order.retain(|&x| x != u);
        self.order.push(u);
    }

    fn remove(&mut self, u: UserId) -> bool {
        let before = self.order.len();
        self.order.retain(|&x| x != u);
        before != self.order.len()
    }

    fn victim(&self, skip: &HashSet<UserId>) -> Option<UserId> {
        self.order.iter().copied().find(|u| !skip.contains(u))
    }
}

#[test]
fn index_matches_naive_over_100k_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut fast = LruIndex::new();
    let mut slow = NaiveLru::default();
    let (mut fast_ev, mut slow_ev) = (Vec::new(), Vec::new());
    for step in 0..100_000 {
        let u = rng.gen_range(0..64u64);
        match rng.gen_range(0..10) {
            0..=5 => {
                fast.touch(u);
                slow.touch(u);
            }
            6 => assert_eq!(fast.remove(u), slow.remove(u), "step {step}"),
            _ => {
                let skip: HashSet<UserId> = (0..64).filter(|_| rng.gen_bool(0.3)).collect();
                let a = fast.victim(|x| skip.contains(&x));
                let b = slow.victim(&skip);
                assert_eq!(a, b, "step {step}");
                if let Some(v) = a {
                    fast.remove(v);
                    slow.remove(v);
                    fast_ev.push(v);
                    slow_ev.push(v);
                }
            }
        }
        assert_eq!(fast.len(), slow.order.len());
        if step % 997 == 0 {
            assert_eq!(fast.iter_lru().collect::<Vec<_>>(), slow.order);
        }
    }
    assert_eq!(fast_ev, slow_ev);
    assert!(fast_ev.len() > 10_000);
}

/// Whole-user LRU eviction by hand: before serving a request, evict least
/// recent other users until the request's new pages plus scratch fit.
struct NaiveCache {
    pages: usize,
    page_size: usize,
    free: usize,
    lru: NaiveLru,
    held: HashMap<UserId, usize>,
    len: HashMap<UserId, usize>,
    evicted: Vec<UserId>,
}

impl NaiveCache {
    fn serve(&mut self, u: UserId, delta: usize, nc: usize) -> bool {
        let len = self.len.get(&u).copied().unwrap_or(0);
        let held = self.held.get(&u).copied().unwrap_or(0);
        let want = pages_needed(len + delta, self.page_size);
        let need = want - held + pages_needed(nc, self.page_size);
        let others: usize = self
            .held
            .iter()
            .filter(|(k, _)| **k != u)
            .map(|(_, v)| v)
            .sum();
        if need > self.free + others {
            return false;
        }
        self.lru.touch(u);
        while self.free < need {
            let skip: HashSet<UserId> = self
                .held
                .iter()
                .filter(|(k, v)| **k == u || **v == 0)
                .map(|(k, _)| *k)
                .chain([u])
                .collect();
            let v = self.lru.victim(&skip).expect("checked above");
            self.free += self.held.insert(v, 0).unwrap();
            self.lru.remove(v);
            self.evicted.push(v);
        }
        self.free -= want - held;
        self.held.insert(u, want);
        self.len.insert(u, len + delta);
        assert!(self.free + self.held.values().sum::<usize>() == self.pages);
        true
    }
}

#[test]
fn manager_eviction_sequence_matches_naive() {
    let kv = KvConfig {
        num_layers: 1,
        num_heads: 1,
        head_dim: 1,
        page_size: 8,
        chunk_size: 8,
        device_pages: 2000,
        onload_pages: 64,
        offload_quota: 64,
        ..KvConfig::default()
    };
    let cfg = RunConfig {
        kv: kv.clone(),
        ..RunConfig::default()
    };
    let mut engine = Engine::new(cfg, Box::new(GpuOnly), "null", false).unwrap();
    let mut naive = NaiveCache {
        pages: kv.device_pages,
        page_size: kv.page_size,
        free: kv.device_pages,
        lru: NaiveLru::default(),
        held: HashMap::new(),
        len: HashMap::new(),
        evicted: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..20_000u64 {
        let u = rng.gen_range(0..100u64);
        let d = rng.gen_range(0..=12);
        let nc = rng.gen_range(1..=10);
        let served = matches!(
            engine
                .submit_batch(&[Request::counts(i * 10, u, d, nc)])
                .unwrap(),
            BatchOutcome::Served { .. }
        );
        assert_eq!(served, naive.serve(u, d, nc), "request {i}");
    }
    let got: Vec<UserId> = engine
        .manager()
        .eviction_log()
        .iter()
        .map(|r| r.user)
        .collect();
    assert!(got.len() > 1000, "only {} evictions", got.len());
    assert_eq!(got, naive.evicted);
}
