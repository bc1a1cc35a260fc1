use super::*;
use crate::mode::{GpuOnly, Hierarchical, Recompute};
use crate::store::{tag_span, BackendRegistry};
use crate::types::{KvKind, TokenAddress};

fn cfg(pages: usize, page: usize, chunk: usize) -> KvConfig {
    KvConfig {
        num_layers: 2,
        num_heads: 1,
        head_dim: 1,
        page_size: page,
        chunk_size: chunk,
        device_pages: pages,
        onload_pages: 4096,
        offload_quota: chunk * 4,
        ..KvConfig::default()
    }
}

fn manager(c: KvConfig, backend: &str) -> CacheManager {
    let geo = PlaneGeometry {
        layers: c.num_layers,
        pages: c.device_pages,
        page_size: c.page_size,
        width: c.width(),
    };
    let planes = BackendRegistry::default().create(backend, geo).unwrap();
    CacheManager::new(c, planes)
}

/// Runs one request through metadata, onload and append with tag payloads.
fn serve(
    m: &mut CacheManager,
    mode: &dyn ServingMode,
    user: UserId,
    delta: usize,
) -> BatchMetadata {
    let mut meta = m
        .prepare_metadata(&[Request::counts(0, user, delta, 1)], mode)
        .unwrap();
    m.commit_onload(&[user]).unwrap();
    m.update_metadata(&mut meta);
    let plan = meta.plans[0].clone();
    let start = m.state(user).unwrap().device_len;
    for l in 0..m.config().num_layers {
        let span = match m.store().backend_name() {
            "tag" => tag_span(user, l, start..start + plan.fresh()),
            _ => KvSpan::Opaque(plan.fresh()),
        };
        m.append_kv(user, l, &span).unwrap();
    }
    m.finish_append(user, plan.fresh(), plan.delta).unwrap();
    m.release_scratch(&meta).unwrap();
    meta
}

fn persist_all(m: &mut CacheManager, user: UserId) {
    let chunk = m.config().chunk_size;
    let st = m.state(user).unwrap();
    for c in st.persisted_len / chunk..st.device_len / chunk {
        let (payload, _) = m.snapshot_chunk(user, c).unwrap();
        m.persist_chunk(user, c, payload).unwrap();
    }
}

fn positions(span: &KvSpan) -> Vec<u32> {
    match span {
        KvSpan::Tags { keys, .. } => keys.iter().map(|t| t.position).collect(),
        _ => panic!("expected tags"),
    }
}

#[test]
fn new_user_gets_one_page_and_no_onload() {
    let mut m = manager(cfg(8, 32, 64), "tag");
    let meta = m
        .prepare_metadata(&[Request::counts(0, 1, 10, 1)], &Hierarchical)
        .unwrap();
    assert_eq!(m.pages(1).len(), 1);
    assert!(meta.onload.is_empty());
    assert_eq!(meta.plans[0].scratch_pages.len(), 1);
    m.check_accounting().unwrap();
}

#[test]
fn third_user_evicts_least_recent() {
    let mut m = manager(cfg(5, 4, 8), "tag");
    serve(&mut m, &GpuOnly, 1, 6);
    serve(&mut m, &GpuOnly, 2, 6);
    // 5 pages: two 2-page users plus one scratch page leave no room for a third
    serve(&mut m, &GpuOnly, 3, 6);
    let evicted: Vec<_> = m.eviction_log().iter().map(|r| r.user).collect();
    assert_eq!(evicted, vec![1]);
    assert_eq!(m.state(2).unwrap().device_len, 6);
    m.check_accounting().unwrap();
}

#[test]
fn round_robin_capacity_two_users() {
    let mut m = manager(cfg(5, 4, 8), "tag");
    serve(&mut m, &GpuOnly, 1, 8);
    serve(&mut m, &GpuOnly, 2, 8);
    serve(&mut m, &GpuOnly, 1, 0);
    serve(&mut m, &GpuOnly, 3, 4);
    assert_eq!(m.eviction_log()[0].user, 2);
    assert_eq!(m.state(1).unwrap().device_len, 8);
}

#[test]
fn locked_victim_is_skipped() {
    let mut m = manager(cfg(5, 4, 8), "tag");
    serve(&mut m, &GpuOnly, 1, 8);
    serve(&mut m, &GpuOnly, 2, 8);
    m.lock_user(1).unwrap();
    serve(&mut m, &GpuOnly, 3, 4);
    assert_eq!(m.eviction_log()[0].user, 2);
    assert!(m.eviction_log().iter().all(|r| r.user != 1));
    assert_eq!(m.evict_user(1).unwrap_err(), CacheError::Locked(1));
    m.unlock_user(1).unwrap();
    assert_eq!(m.evict_user(1).unwrap().len(), 2);
}

#[test]
fn all_locked_is_unsatisfiable_and_changes_nothing() {
    let mut m = manager(cfg(3, 4, 8), "tag");
    serve(&mut m, &GpuOnly, 1, 8);
    m.lock_user(1).unwrap();
    let before = m.page_map();
    let err = m
        .prepare_metadata(&[Request::counts(0, 2, 8, 1)], &GpuOnly)
        .unwrap_err();
    assert!(matches!(err, CacheError::Unsatisfiable { need: 3, .. }));
    assert_eq!(format!("{:?}", m.page_map()), format!("{before:?}"));
}

#[test]
fn eviction_tail_loss() {
    let mut m = manager(cfg(256, 32, 1024), "null");
    serve(&mut m, &Hierarchical, 7, 2100);
    persist_all(&mut m, 7);
    assert_eq!(m.get_total_cache_length(&[7, 99]), vec![2100, 0]);
    let freed = m.evict_user(7).unwrap();
    assert_eq!(freed.len(), 66);
    let rec = m.eviction_log()[0].clone();
    assert_eq!(rec.tail_lost, 52);
    assert_eq!(m.get_total_cache_length(&[7]), vec![2048]);
    assert_eq!(m.stats().tail_tokens_lost, 52);
}

#[test]
fn evicted_user_exposes_persisted_prefix() {
    let mut m = manager(cfg(256, 32, 1024), "null");
    serve(&mut m, &Hierarchical, 1, 5189);
    persist_all(&mut m, 1);
    m.evict_user(1).unwrap();
    let st = m.state(1).unwrap();
    assert_eq!((st.device_len, st.persisted_len), (0, 5120));
    assert_eq!(m.get_total_cache_length(&[1]), vec![5120]);
    let meta = m
        .prepare_metadata(&[Request::counts(1, 1, 3, 1)], &Hierarchical)
        .unwrap();
    let p = &meta.plans[0];
    assert_eq!(
        (p.p_pre, p.host_hit, p.device_hit, p.tail),
        (5120, 5120, 0, 69)
    );
    assert_eq!(
        meta.onload.entries,
        vec![OnloadEntry {
            user: 1,
            chunks: 5,
            tokens: 5120
        }]
    );
}

#[test]
fn commit_onload_restores_prefix_tags() {
    let mut m = manager(cfg(256, 32, 1024), "tag");
    serve(&mut m, &Hierarchical, 4, 2100);
    persist_all(&mut m, 4);
    m.evict_user(4).unwrap();
    assert_eq!(m.commit_onload(&[4]).unwrap(), 0);
    m.prepare_metadata(&[Request::counts(1, 4, 0, 1)], &Hierarchical)
        .unwrap();
    assert_eq!(m.commit_onload(&[4]).unwrap(), 1);
    let st = m.state(4).unwrap();
    assert_eq!(st.device_len, 2048);
    assert_eq!(pages_needed(st.device_len, 32), 64);
    for l in 0..2 {
        let span = m.read_device(4, l, 0..2048).unwrap();
        assert_eq!(positions(&span), (0..2048).collect::<Vec<_>>());
    }
}

#[test]
fn append_spills_into_next_page() {
    let mut m = manager(cfg(8, 32, 64), "tag");
    serve(&mut m, &GpuOnly, 1, 30);
    assert_eq!(m.last_page_len(1), 30);
    serve(&mut m, &GpuOnly, 1, 5);
    assert_eq!(m.last_page_len(1), 3);
    assert_eq!(m.pages(1).len(), 2);
    serve(&mut m, &GpuOnly, 2, 32);
    assert_eq!(m.last_page_len(2), 32);
}

#[test]
fn repeated_appends_have_no_gaps() {
    let mut m = manager(cfg(16, 8, 16), "tag");
    for d in [7, 13, 1, 40, 39] {
        serve(&mut m, &GpuOnly, 9, d);
    }
    let span = m.read_device(9, 1, 0..100).unwrap();
    assert_eq!(positions(&span), (0..100).collect::<Vec<_>>());
    if let KvSpan::Tags { values, .. } = span {
        assert!(values
            .iter()
            .all(|t| t.kind == KvKind::Value && t.layer == 1 && t.user == 9));
    }
}

#[test]
fn same_user_twice_in_batch_sees_first_append() {
    let mut m = manager(cfg(16, 4, 8), "null");
    serve(&mut m, &GpuOnly, 1, 6);
    let batch = [Request::counts(0, 1, 3, 1), Request::counts(0, 1, 2, 1)];
    let meta = m.prepare_metadata(&batch, &GpuOnly).unwrap();
    assert_eq!((meta.plans[0].history, meta.plans[0].p_pre), (6, 6));
    assert_eq!((meta.plans[1].history, meta.plans[1].p_pre), (9, 9));
    assert!(meta.plans[1].repeat);
    assert_eq!(m.pages(1).len(), 3);

    let meta = m.prepare_metadata(&batch, &Recompute).unwrap();
    assert_eq!((meta.plans[1].p_pre, meta.plans[1].tail), (0, 9));
}

#[test]
fn update_metadata_excludes_candidates_from_lengths() {
    let mut m = manager(cfg(16, 4, 8), "null");
    let batch = [Request::counts(0, 1, 3, 2), Request::counts(0, 2, 5, 1)];
    let mut meta = m.prepare_metadata(&batch, &GpuOnly).unwrap();
    m.update_metadata(&mut meta);
    assert_eq!(meta.offsets, vec![0, 5, 11]);
    assert_eq!(meta.total_lengths, vec![3, 5]);
}

#[test]
fn strip_examples() {
    let hist: Vec<TokenId> = (0..10).collect();
    let s = strip_cached_tokens(&hist, &[50, 51], &[7], 10);
    assert_eq!(s.fresh, vec![50, 51]);
    let s = strip_cached_tokens(&hist, &[50], &[7], 0);
    assert_eq!(s.fresh.len(), 11);
    let s = strip_cached_tokens(&hist, &[50], &[7], 8);
    assert_eq!(s.fresh, vec![8, 9, 50]);
    assert_eq!(s.candidates, vec![7]);
}

#[test]
fn lock_requires_residency() {
    let mut m = manager(cfg(8, 4, 8), "null");
    assert_eq!(m.lock_user(1).unwrap_err(), CacheError::NotResident(1));
    serve(&mut m, &GpuOnly, 1, 4);
    m.lock_user(1).unwrap();
    assert_eq!(m.lock_user(1).unwrap_err(), CacheError::AlreadyLocked(1));
}

#[test]
fn snapshot_reads_chunk_tags() {
    let mut m = manager(cfg(128, 32, 1024), "tag");
    serve(&mut m, &Hierarchical, 2, 2048);
    let (payload, pages) = m.snapshot_chunk(2, 1).unwrap();
    assert_eq!(pages.len(), 32);
    assert_eq!(
        positions(&payload.layers[0]),
        (1024..2048).collect::<Vec<_>>()
    );
    let tag = TokenAddress {
        user: 2,
        position: 1024,
        layer: 1,
        kind: KvKind::Key,
    };
    match &payload.layers[1] {
        KvSpan::Tags { keys, .. } => assert_eq!(keys[0], tag),
        _ => unreachable!(),
    }
}
