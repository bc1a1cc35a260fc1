use std::ops::Range;

use serde::Serialize;

use super::{KvSpan, StoreError};

/// Device-side contiguous staging region for onloaded history.
///
/// Holds one batch's onloaded tokens per layer; cleared between batches.
#[derive(Debug)]
pub struct OnloadBuffer {
    capacity_tokens: usize,
    layers: Vec<KvSpan>,
}

impl OnloadBuffer {
    pub fn new(capacity_pages: usize, page_size: usize, empty: KvSpan, num_layers: usize) -> Self {
        Self {
            capacity_tokens: capacity_pages * page_size,
            layers: vec![empty; num_layers],
        }
    }

    pub fn capacity_tokens(&self) -> usize {
        self.capacity_tokens
    }

    pub fn used(&self, layer: usize) -> usize {
        self.layers[layer].len()
    }

    /// Appends `span` to the layer's region and returns where it landed.
    pub fn stage(&mut self, layer: usize, span: &KvSpan) -> Result<Range<usize>, StoreError> {
        let start = self.layers[layer].len();
        let need = start + span.len();
        if need > self.capacity_tokens {
            return Err(StoreError::OnloadOverflow {
                need,
                capacity: self.capacity_tokens,
            });
        }
        if !self.layers[layer].extend(span) {
            return Err(StoreError::BackendMismatch { backend: "onload" });
        }
        Ok(start..need)
    }

    pub fn view(&self, layer: usize, range: Range<usize>) -> KvSpan {
        self.layers[layer].slice(range)
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            *l = l.empty_like();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferState {
    Idle,
    Filling,
    Transferring,
}

/// Two chunk-sized host staging buffers used in ping-pong order.
#[derive(Debug)]
pub struct PinnedBufferPair {
    capacity_tokens: usize,
    states: [BufferState; 2],
    data: [Option<KvSpan>; 2],
    next: usize,
}

impl PinnedBufferPair {
    pub fn new(chunk_size: usize) -> Self {
        Self {
            capacity_tokens: chunk_size,
            states: [BufferState::Idle; 2],
            data: [None, None],
            next: 0,
        }
    }

    pub fn state(&self, idx: usize) -> BufferState {
        self.states[idx]
    }

    /// Copies `span` into the next buffer in ping-pong order.
    pub fn fill(&mut self, span: KvSpan) -> Result<usize, StoreError> {
        let idx = self.next;
        if self.states[idx] != BufferState::Idle {
            return Err(StoreError::BufferBusy(idx));
        }
        if span.len() > self.capacity_tokens {
            return Err(StoreError::OnloadOverflow {
                need: span.len(),
                capacity: self.capacity_tokens,
            });
        }
        self.states[idx] = BufferState::Filling;
        self.data[idx] = Some(span);
        self.next = 1 - idx;
        Ok(idx)
    }

    pub fn begin_transfer(&mut self, idx: usize) -> Result<(), StoreError> {
        if self.states[1 - idx] == BufferState::Transferring {
            return Err(StoreError::BusBusy);
        }
        if self.states[idx] != BufferState::Filling {
            return Err(StoreError::BufferBusy(idx));
        }
        self.states[idx] = BufferState::Transferring;
        Ok(())
    }

    /// Completes the transfer and hands the payload to the device side.
    pub fn finish_transfer(&mut self, idx: usize) -> Result<KvSpan, StoreError> {
        if self.states[idx] != BufferState::Transferring {
            return Err(StoreError::BufferBusy(idx));
        }
        self.states[idx] = BufferState::Idle;
        Ok(self.data[idx]
            .take()
            .expect("transferring buffer holds data"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onload_buffer_bounds() {
        let mut b = OnloadBuffer::new(2, 4, KvSpan::Opaque(0), 1);
        assert_eq!(b.stage(0, &KvSpan::Opaque(5)).unwrap(), 0..5);
        assert_eq!(
            b.stage(0, &KvSpan::Opaque(4)).unwrap_err(),
            StoreError::OnloadOverflow {
                need: 9,
                capacity: 8
            }
        );
        b.clear();
        assert_eq!(b.used(0), 0);
    }

    #[test]
    fn ping_pong_alternates_and_serializes_bus() {
        let mut p = PinnedBufferPair::new(4);
        let a = p.fill(KvSpan::Opaque(4)).unwrap();
        let b = p.fill(KvSpan::Opaque(4)).unwrap();
        assert_eq!((a, b), (0, 1));
        p.begin_transfer(a).unwrap();
        assert_eq!(p.begin_transfer(b).unwrap_err(), StoreError::BusBusy);
        // buffer 0 is still in flight, so the next fill must wait
        p.finish_transfer(b).unwrap_err();
        assert_eq!(
            p.fill(KvSpan::Opaque(1)).unwrap_err(),
            StoreError::BufferBusy(0)
        );
        assert_eq!(p.finish_transfer(a).unwrap(), KvSpan::Opaque(4));
        p.begin_transfer(b).unwrap();
        assert_eq!(p.state(b), BufferState::Transferring);
    }

    #[test]
    fn oversize_fill_rejected() {
        let mut p = PinnedBufferPair::new(4);
        assert!(p.fill(KvSpan::Opaque(5)).is_err());
    }
}
