use std::ops::Range;

use crate::model::LayerKv;
use crate::types::TokenAddress;

/// A contiguous run of per-token KV entries for one layer.
///
/// The variant matches the backend that produced it: real numbers, identity
/// tags, or a bare length for metadata-only runs.
#[derive(Debug, Clone, PartialEq)]
pub enum KvSpan {
    Values(LayerKv),
    Tags {
        keys: Vec<TokenAddress>,
        values: Vec<TokenAddress>,
    },
    Opaque(usize),
}

impl KvSpan {
    pub fn len(&self) -> usize {
        match self {
            KvSpan::Values(kv) => kv.len(),
            KvSpan::Tags { keys, .. } => keys.len(),
            KvSpan::Opaque(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// An empty span of the same variant.
    pub fn empty_like(&self) -> KvSpan {
        match self {
            KvSpan::Values(kv) => KvSpan::Values(LayerKv::empty(kv.width)),
            KvSpan::Tags { .. } => KvSpan::Tags {
                keys: Vec::new(),
                values: Vec::new(),
            },
            KvSpan::Opaque(_) => KvSpan::Opaque(0),
        }
    }

    pub fn slice(&self, range: Range<usize>) -> KvSpan {
        assert!(range.end <= self.len(), "span slice out of bounds");
        match self {
            KvSpan::Values(kv) => KvSpan::Values(kv.slice(range)),
            KvSpan::Tags { keys, values } => KvSpan::Tags {
                keys: keys[range.clone()].to_vec(),
                values: values[range].to_vec(),
            },
            KvSpan::Opaque(_) => KvSpan::Opaque(range.len()),
        }
    }

    /// Appends `other`; returns false if the variants differ.
    pub fn extend(&mut self, other: &KvSpan) -> bool {
        match (self, other) {
            (KvSpan::Values(a), KvSpan::Values(b)) if a.width == b.width => a.extend_from(b),
            (KvSpan::Tags { keys, values }, KvSpan::Tags { keys: k, values: v }) => {
                keys.extend_from_slice(k);
                values.extend_from_slice(v);
            }
            (KvSpan::Opaque(a), KvSpan::Opaque(b)) => *a += b,
            _ => return false,
        }
        true
    }

    pub fn as_values(&self) -> Option<&LayerKv> {
        match self {
            KvSpan::Values(kv) => Some(kv),
            _ => None,
        }
    }
}
