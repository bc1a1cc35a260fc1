//! Physical storage tiers: the device paged store, the host chunked store,
//! and the staging buffers between them.

mod backend;
mod host;
mod span;
mod staging;

use thiserror::Error;

pub use backend::{
    tag_span, BackendRegistry, NullPlanes, PagePlanes, PlaneGeometry, TagPlanes, ValuePlanes,
};
pub use host::{ChunkPayload, HostChunkedStore};
pub use span::KvSpan;
pub use staging::{BufferState, OnloadBuffer, PinnedBufferPair};

use crate::types::{pages_needed, PageId, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("page {0} is not allocated")]
    PageNotAllocated(PageId),
    #[error("page {0} is out of range")]
    PageOutOfRange(PageId),
    #[error("span of {len} tokens does not fit exactly into {pages} pages")]
    SpanPageMismatch { len: usize, pages: usize },
    #[error("need {need} tokens of page capacity, {have} allocated")]
    InsufficientPages { need: usize, have: usize },
    #[error("span payload does not match the {backend} backend")]
    BackendMismatch { backend: &'static str },
    #[error("user {user}: chunk write at index {got}, expected {expected}")]
    NonContiguousWrite {
        user: UserId,
        expected: usize,
        got: usize,
    },
    #[error("user {user}: chunks {start}..{end} not persisted ({persisted} chunks stored)")]
    ReadBeyondPersisted {
        user: UserId,
        start: usize,
        end: usize,
        persisted: usize,
    },
    #[error("host capacity of {capacity} chunks exceeded")]
    HostCapacityExceeded { capacity: usize },
    #[error("chunk payload has wrong shape")]
    ChunkShape,
    #[error("onload buffer overflow: {need} tokens, capacity {capacity}")]
    OnloadOverflow { need: usize, capacity: usize },
    #[error("pinned buffer {0} is busy")]
    BufferBusy(usize),
    #[error("another pinned buffer is already transferring")]
    BusBusy,
}

/// Device tier: `L` planes of fixed-size pages plus the free list.
#[derive(Debug)]
pub struct DevicePagedStore {
    page_size: usize,
    num_layers: usize,
    planes: Box<dyn PagePlanes>,
    free: Vec<PageId>,
    allocated: Vec<bool>,
}

impl DevicePagedStore {
    pub fn new(geo: PlaneGeometry, planes: Box<dyn PagePlanes>) -> Self {
        let free = (0..geo.pages as PageId).rev().collect();
        Self {
            page_size: geo.page_size,
            num_layers: geo.layers,
            planes,
            free,
            allocated: vec![false; geo.pages],
        }
    }

    pub fn backend_name(&self) -> &'static str {
        self.planes.name()
    }

    pub fn num_pages(&self) -> usize {
        self.allocated.len()
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn used_count(&self) -> usize {
        self.num_pages() - self.free.len()
    }

    pub fn is_allocated(&self, page: PageId) -> bool {
        self.allocated.get(page as usize).copied().unwrap_or(false)
    }

    pub fn free_pages(&self) -> &[PageId] {
        &self.free
    }

    /// Takes any free page. Every free page is equally usable by every user.
    pub fn alloc(&mut self) -> Option<PageId> {
        let p = self.free.pop()?;
        self.allocated[p as usize] = true;
        Some(p)
    }

    pub fn release(&mut self, page: PageId) -> Result<(), StoreError> {
        match self.allocated.get_mut(page as usize) {
            None => Err(StoreError::PageOutOfRange(page)),
            Some(false) => Err(StoreError::PageNotAllocated(page)),
            Some(flag) => {
                *flag = false;
                self.free.push(page);
                Ok(())
            }
        }
    }

    pub fn empty_span(&self) -> KvSpan {
        self.planes.empty_span()
    }

    fn check_pages(&self, pages: &[PageId]) -> Result<(), StoreError> {
        match pages.iter().find(|&&p| !self.is_allocated(p)) {
            Some(&p) => Err(StoreError::PageNotAllocated(p)),
            None => Ok(()),
        }
    }

    /// Writes `span` to token positions `start..` of the logical sequence laid
    /// out over `pages`.
    pub fn write_at(
        &mut self,
        layer: usize,
        pages: &[PageId],
        start: usize,
        span: &KvSpan,
    ) -> Result<(), StoreError> {
        let len = span.len();
        let cap = pages.len() * self.page_size;
        if start + len > cap {
            return Err(StoreError::InsufficientPages {
                need: start + len,
                have: cap,
            });
        }
        let first = start / self.page_size;
        let last = (start + len).div_ceil(self.page_size);
        self.check_pages(&pages[first..last.max(first)])?;
        let mut done = 0;
        while done < len {
            let pos = start + done;
            let (page, offset) = (pages[pos / self.page_size], pos % self.page_size);
            let n = (self.page_size - offset).min(len - done);
            self.planes.write(layer, page, offset, span, done, n)?;
            done += n;
        }
        Ok(())
    }

    /// Reads token positions `range` of the logical sequence laid out over `pages`.
    pub fn read_range(
        &self,
        layer: usize,
        pages: &[PageId],
        range: std::ops::Range<usize>,
    ) -> Result<KvSpan, StoreError> {
        let cap = pages.len() * self.page_size;
        if range.end > cap {
            return Err(StoreError::InsufficientPages {
                need: range.end,
                have: cap,
            });
        }
        let mut out = self.planes.empty_span();
        let mut pos = range.start;
        while pos < range.end {
            let page = pages[pos / self.page_size];
            if !self.is_allocated(page) {
                return Err(StoreError::PageNotAllocated(page));
            }
            let offset = pos % self.page_size;
            let n = (self.page_size - offset).min(range.end - pos);
            out.extend(&self.planes.read(layer, page, offset, n));
            pos += n;
        }
        Ok(out)
    }

    /// Distributes a contiguous span over `dst_pages` in order. The span must
    /// need exactly that many pages; the last one may be partial.
    pub fn scatter(
        &mut self,
        layer: usize,
        span: &KvSpan,
        dst_pages: &[PageId],
    ) -> Result<(), StoreError> {
        if pages_needed(span.len(), self.page_size) != dst_pages.len() {
            return Err(StoreError::SpanPageMismatch {
                len: span.len(),
                pages: dst_pages.len(),
            });
        }
        self.check_pages(dst_pages)?;
        self.write_at(layer, dst_pages, 0, span)
    }

    /// Concatenates the first `len` tokens held by `src_pages`.
    pub fn gather(
        &self,
        layer: usize,
        src_pages: &[PageId],
        len: usize,
    ) -> Result<KvSpan, StoreError> {
        self.check_pages(src_pages)?;
        self.read_range(layer, src_pages, 0..len)
    }
}
