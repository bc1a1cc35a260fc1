use std::collections::HashMap;
use std::ops::Range;

use crate::types::{ChunkId, UserId};

use super::{KvSpan, StoreError};

/// One host chunk: `chunk_size` tokens of KV for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPayload {
    pub layers: Vec<KvSpan>,
}

/// Host tier. Each user's chunks form a contiguous prefix of the history.
#[derive(Debug)]
pub struct HostChunkedStore {
    chunk_size: usize,
    num_layers: usize,
    /// 0 = unbounded.
    capacity: usize,
    payloads: Vec<ChunkPayload>,
    users: HashMap<UserId, Vec<ChunkId>>,
}

impl HostChunkedStore {
    pub fn new(chunk_size: usize, num_layers: usize, capacity: usize) -> Self {
        Self {
            chunk_size,
            num_layers,
            capacity,
            payloads: Vec::new(),
            users: HashMap::new(),
        }
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn stored_chunks(&self) -> usize {
        self.payloads.len()
    }

    /// Chunks that can still be written, `None` if unbounded.
    pub fn remaining(&self) -> Option<usize> {
        (self.capacity > 0).then(|| self.capacity.saturating_sub(self.payloads.len()))
    }

    pub fn chunk_ids(&self, user: UserId) -> &[ChunkId] {
        self.users.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn persisted_len(&self, user: UserId) -> usize {
        self.chunk_ids(user).len() * self.chunk_size
    }

    /// Appends whole chunks starting at chunk index `first`, which must equal
    /// the number of chunks already stored for `user`.
    pub fn write_chunks(
        &mut self,
        user: UserId,
        first: usize,
        chunks: Vec<ChunkPayload>,
    ) -> Result<Vec<ChunkId>, StoreError> {
        let have = self.chunk_ids(user).len();
        if first != have {
            return Err(StoreError::NonContiguousWrite {
                user,
                expected: have,
                got: first,
            });
        }
        if let Some(left) = self.remaining() {
            if chunks.len() > left {
                return Err(StoreError::HostCapacityExceeded {
                    capacity: self.capacity,
                });
            }
        }
        if chunks.iter().any(|c| {
            c.layers.len() != self.num_layers || c.layers.iter().any(|s| s.len() != self.chunk_size)
        }) {
            return Err(StoreError::ChunkShape);
        }
        let mut ids = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let id = self.payloads.len() as ChunkId;
            self.payloads.push(chunk);
            ids.push(id);
        }
        self.users.entry(user).or_default().extend_from_slice(&ids);
        Ok(ids)
    }

    pub fn read_chunks(
        &self,
        user: UserId,
        range: Range<usize>,
    ) -> Result<Vec<&ChunkPayload>, StoreError> {
        let ids = self.chunk_ids(user);
        if range.start > range.end || range.end > ids.len() {
            return Err(StoreError::ReadBeyondPersisted {
                user,
                start: range.start,
                end: range.end,
                persisted: ids.len(),
            });
        }
        Ok(ids[range]
            .iter()
            .map(|&id| &self.payloads[id as usize])
            .collect())
    }

    /// One layer of one chunk.
    pub fn read_layer(
        &self,
        user: UserId,
        chunk: usize,
        layer: usize,
    ) -> Result<&KvSpan, StoreError> {
        let c = self.read_chunks(user, chunk..chunk + 1)?;
        Ok(&c[0].layers[layer])
    }
}
