//! Payload backends for the device page planes, selectable by name.

use std::fmt;

use crate::model::LayerKv;
use crate::types::{KvKind, PageId, TokenAddress};

use super::span::KvSpan;
use super::StoreError;

/// Shape of the paged planes: `[layers][pages][2][page_size][width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneGeometry {
    pub layers: usize,
    pub pages: usize,
    pub page_size: usize,
    pub width: usize,
}

/// Storage behind the device page planes.
///
/// Page ids are layer-agnostic: the same id addresses the same slot in
/// every layer plane.
pub trait PagePlanes: fmt::Debug + Send {
    fn name(&self) -> &'static str;

    /// Writes `src[src_start..src_start + len]` into `page` starting at slot `offset`.
    fn write(
        &mut self,
        layer: usize,
        page: PageId,
        offset: usize,
        src: &KvSpan,
        src_start: usize,
        len: usize,
    ) -> Result<(), StoreError>;

    fn read(&self, layer: usize, page: PageId, offset: usize, len: usize) -> KvSpan;

    fn empty_span(&self) -> KvSpan;
}

type Factory = fn(PlaneGeometry) -> Box<dyn PagePlanes>;

/// Named backend constructors.
pub struct BackendRegistry {
    entries: Vec<(&'static str, Factory)>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: Vec::new(),
        };
        r.register("value", |g| Box::new(ValuePlanes::new(g)));
        r.register("tag", |g| Box::new(TagPlanes::new(g)));
        r.register("null", |_| Box::new(NullPlanes));
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn create(&self, name: &str, geometry: PlaneGeometry) -> Option<Box<dyn PagePlanes>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f(geometry))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

fn kind_index(kind: KvKind) -> usize {
    match kind {
        KvKind::Key => 0,
        KvKind::Value => 1,
    }
}

/// Real `f64` payloads.
pub struct ValuePlanes {
    geo: PlaneGeometry,
    data: Vec<f64>,
}

impl fmt::Debug for ValuePlanes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValuePlanes")
            .field("geo", &self.geo)
            .finish()
    }
}

impl ValuePlanes {
    pub fn new(geo: PlaneGeometry) -> Self {
        let n = geo.layers * geo.pages * 2 * geo.page_size * geo.width;
        Self {
            geo,
            data: vec![0.0; n],
        }
    }

    fn base(&self, layer: usize, page: PageId, kind: KvKind, slot: usize) -> usize {
        let g = &self.geo;
        (((layer * g.pages + page as usize) * 2 + kind_index(kind)) * g.page_size + slot) * g.width
    }
}

impl PagePlanes for ValuePlanes {
    fn name(&self) -> &'static str {
        "value"
    }

    fn write(
        &mut self,
        layer: usize,
        page: PageId,
        offset: usize,
        src: &KvSpan,
        src_start: usize,
        len: usize,
    ) -> Result<(), StoreError> {
        let KvSpan::Values(kv) = src else {
            return Err(StoreError::BackendMismatch { backend: "value" });
        };
        let w = self.geo.width;
        if kv.width != w {
            return Err(StoreError::BackendMismatch { backend: "value" });
        }
        for (kind, buf) in [(KvKind::Key, &kv.keys), (KvKind::Value, &kv.values)] {
            let dst = self.base(layer, page, kind, offset);
            self.data[dst..dst + len * w]
                .copy_from_slice(&buf[src_start * w..(src_start + len) * w]);
        }
        Ok(())
    }

    fn read(&self, layer: usize, page: PageId, offset: usize, len: usize) -> KvSpan {
        let w = self.geo.width;
        let k = self.base(layer, page, KvKind::Key, offset);
        let v = self.base(layer, page, KvKind::Value, offset);
        KvSpan::Values(LayerKv {
            width: w,
            keys: self.data[k..k + len * w].to_vec(),
            values: self.data[v..v + len * w].to_vec(),
        })
    }

    fn empty_span(&self) -> KvSpan {
        KvSpan::Values(LayerKv::empty(self.geo.width))
    }
}

/// Identity tags instead of numbers.
#[derive(Debug)]
pub struct TagPlanes {
    geo: PlaneGeometry,
    slots: Vec<Option<TokenAddress>>,
}

impl TagPlanes {
    pub fn new(geo: PlaneGeometry) -> Self {
        Self {
            geo,
            slots: vec![None; geo.layers * geo.pages * 2 * geo.page_size],
        }
    }

    fn base(&self, layer: usize, page: PageId, kind: KvKind, slot: usize) -> usize {
        let g = &self.geo;
        ((layer * g.pages + page as usize) * 2 + kind_index(kind)) * g.page_size + slot
    }
}

impl PagePlanes for TagPlanes {
    fn name(&self) -> &'static str {
        "tag"
    }

    fn write(
        &mut self,
        layer: usize,
        page: PageId,
        offset: usize,
        src: &KvSpan,
        src_start: usize,
        len: usize,
    ) -> Result<(), StoreError> {
        let KvSpan::Tags { keys, values } = src else {
            return Err(StoreError::BackendMismatch { backend: "tag" });
        };
        for (kind, tags) in [(KvKind::Key, keys), (KvKind::Value, values)] {
            let dst = self.base(layer, page, kind, offset);
            for (slot, tag) in self.slots[dst..dst + len]
                .iter_mut()
                .zip(&tags[src_start..src_start + len])
            {
                *slot = Some(*tag);
            }
        }
        Ok(())
    }

    fn read(&self, layer: usize, page: PageId, offset: usize, len: usize) -> KvSpan {
        let collect = |kind| -> Vec<TokenAddress> {
            let b = self.base(layer, page, kind, offset);
            // an unwritten slot reads as an impossible address so conservation
            // checks flag it
            self.slots[b..b + len]
                .iter()
                .map(|s| {
                    s.unwrap_or(TokenAddress {
                        user: u64::MAX,
                        position: u32::MAX,
                        layer: u16::MAX,
                        kind,
                    })
                })
                .collect()
        };
        KvSpan::Tags {
            keys: collect(KvKind::Key),
            values: collect(KvKind::Value),
        }
    }

    fn empty_span(&self) -> KvSpan {
        KvSpan::Tags {
            keys: Vec::new(),
            values: Vec::new(),
        }
    }
}

/// Lengths only. Used for large simulations where payload memory would dominate.
#[derive(Debug)]
pub struct NullPlanes;

impl PagePlanes for NullPlanes {
    fn name(&self) -> &'static str {
        "null"
    }

    fn write(
        &mut self,
        _layer: usize,
        _page: PageId,
        _offset: usize,
        src: &KvSpan,
        _src_start: usize,
        _len: usize,
    ) -> Result<(), StoreError> {
        match src {
            KvSpan::Opaque(_) => Ok(()),
            _ => Err(StoreError::BackendMismatch { backend: "null" }),
        }
    }

    fn read(&self, _layer: usize, _page: PageId, _offset: usize, len: usize) -> KvSpan {
        KvSpan::Opaque(len)
    }

    fn empty_span(&self) -> KvSpan {
        KvSpan::Opaque(0)
    }
}

/// Tags for positions `range` of `user` in `layer`.
pub fn tag_span(user: u64, layer: usize, range: std::ops::Range<usize>) -> KvSpan {
    let make = |kind| {
        range
            .clone()
            .map(|p| TokenAddress {
                user,
                position: p as u32,
                layer: layer as u16,
                kind,
            })
            .collect()
    };
    KvSpan::Tags {
        keys: make(KvKind::Key),
        values: make(KvKind::Value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> PlaneGeometry {
        PlaneGeometry {
            layers: 2,
            pages: 4,
            page_size: 4,
            width: 3,
        }
    }

    #[test]
    fn registry_knows_builtin_backends() {
        let r = BackendRegistry::default();
        assert_eq!(r.names(), vec!["value", "tag", "null"]);
        assert_eq!(r.create("tag", geo()).unwrap().name(), "tag");
        assert!(r.create("nope", geo()).is_none());
    }

    #[test]
    fn value_planes_layer_isolated() {
        let mut p = ValuePlanes::new(geo());
        let kv = LayerKv {
            width: 3,
            keys: (0..6).map(|x| x as f64).collect(),
            values: (10..16).map(|x| x as f64).collect(),
        };
        p.write(1, 2, 1, &KvSpan::Values(kv.clone()), 0, 2).unwrap();
        assert_eq!(p.read(1, 2, 1, 2), KvSpan::Values(kv));
        let other = p.read(0, 2, 1, 2);
        assert!(other.as_values().unwrap().keys.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_span_rejected() {
        let mut p = TagPlanes::new(geo());
        let err = p.write(0, 0, 0, &KvSpan::Opaque(1), 0, 1).unwrap_err();
        assert!(matches!(
            err,
            StoreError::BackendMismatch { backend: "tag" }
        ));
    }
}
