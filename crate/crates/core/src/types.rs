//! Identifiers, request/sequence bookkeeping, and page/chunk geometry.

use serde::{Deserialize, Serialize};

pub type UserId = u64;
pub type TokenId = u32;
pub type PageId = u32;
pub type ChunkId = u32;

/// Number of `page_size`-token pages required to hold `len` tokens.
pub fn pages_needed(len: usize, page_size: usize) -> usize {
    assert!(page_size >= 1, "page size must be positive");
    len.div_ceil(page_size)
}

/// Longest prefix of `len` tokens that consists of whole chunks.
pub fn persisted_prefix(len: usize, chunk_size: usize) -> usize {
    assert!(chunk_size >= 1, "chunk size must be positive");
    (len / chunk_size) * chunk_size
}

/// Token ids carried by a request when the engine needs real inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTokens {
    pub new_tokens: Vec<TokenId>,
    pub candidates: Vec<TokenId>,
}

/// One user visit: incremental interactions since the last visit plus the
/// candidate set to rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub timestamp: u64,
    pub user: UserId,
    pub delta_len: usize,
    pub num_candidates: usize,
    pub tokens: Option<RequestTokens>,
}

impl Request {
    /// A request that only carries lengths.
    pub fn counts(timestamp: u64, user: UserId, delta_len: usize, num_candidates: usize) -> Self {
        Self {
            timestamp,
            user,
            delta_len,
            num_candidates,
            tokens: None,
        }
    }

    pub fn with_tokens(
        timestamp: u64,
        user: UserId,
        new_tokens: Vec<TokenId>,
        candidates: Vec<TokenId>,
    ) -> Self {
        Self {
            timestamp,
            user,
            delta_len: new_tokens.len(),
            num_candidates: candidates.len(),
            tokens: Some(RequestTokens {
                new_tokens,
                candidates,
            }),
        }
    }
}

/// Per-user lengths tracked by the cache manager.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceState {
    /// Lifetime history length.
    pub total_len: usize,
    /// Tokens materialized in device pages, always a prefix of the history.
    pub device_len: usize,
    /// Tokens durably stored on the host tier, always a whole number of chunks.
    pub persisted_len: usize,
    pub locked: bool,
    pub last_access: u64,
}

impl SequenceState {
    /// Reusable prefix length: whatever either tier can still supply.
    pub fn reusable_len(&self) -> usize {
        self.device_len.max(self.persisted_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KvKind {
    Key,
    Value,
}

/// Identity of one stored KV vector, used by the tag backend to verify data
/// movement without numeric payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenAddress {
    pub user: UserId,
    pub position: u32,
    pub layer: u16,
    pub kind: KvKind,
}
