//! Static device memory budget: paged cache, per-layer workbench buffers and
//! a fixed residual for weights and runtime.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::KvConfig;
use crate::types::pages_needed;

const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Footprint {
    pub batch: usize,
    pub max_seq: usize,
    /// `B * L_max`
    pub max_tokens: usize,
    pub device_pages: usize,
    pub onload_pages: usize,
    /// Onload pages needed to stage a full batch of `max_seq` sequences.
    pub derived_onload_pages: usize,
    pub cache_bytes: u64,
    pub uvqk_bytes_per_layer: u64,
    pub output_bytes_per_layer: u64,
    pub cache_mib: f64,
    /// Per-layer buffers, each rounded to whole MiB.
    pub uvqk_mib_per_layer: f64,
    pub output_mib_per_layer: f64,
    pub workbench_mib_per_layer: f64,
    pub workbench_mib: f64,
    pub residual_mib: f64,
    pub total_mib: f64,
    pub total_gib: f64,
}

/// Computes the budget. `onload_pages` overrides `kv.onload_pages`.
pub fn memory_footprint(
    kv: &KvConfig,
    batch: usize,
    max_seq: usize,
    onload_pages: Option<usize>,
    residual_mib: f64,
) -> Footprint {
    let n_o = onload_pages.unwrap_or(kv.onload_pages);
    let width = kv.width() as u64;
    let bytes = kv.bytes_per_element as u64;
    let t_max = batch * max_seq;
    let cache_bytes = kv.num_layers as u64
        * (kv.device_pages + n_o) as u64
        * 2
        * kv.page_size as u64
        * width
        * bytes;
    let uvqk = t_max as u64 * 4 * width * bytes;
    let output = t_max as u64 * 2 * width * bytes;
    let uvqk_mib = (uvqk as f64 / MIB).round();
    let output_mib = (output as f64 / MIB).round();
    let per_layer = uvqk_mib + output_mib;
    let workbench = per_layer * kv.num_layers as f64;
    let cache_mib = cache_bytes as f64 / MIB;
    let total = cache_mib + workbench + residual_mib;
    Footprint {
        batch,
        max_seq,
        max_tokens: t_max,
        device_pages: kv.device_pages,
        onload_pages: n_o,
        derived_onload_pages: pages_needed(t_max, kv.page_size),
        cache_bytes,
        uvqk_bytes_per_layer: uvqk,
        output_bytes_per_layer: output,
        cache_mib,
        uvqk_mib_per_layer: uvqk_mib,
        output_mib_per_layer: output_mib,
        workbench_mib_per_layer: per_layer,
        workbench_mib: workbench,
        residual_mib,
        total_mib: total,
        total_gib: total / 1024.0,
    }
}

impl Footprint {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Unified KV cache table");
        let _ = writeln!(
            s,
            "  pages: {} primary + {} onload (derived onload for B*L_max = {}: {})",
            self.device_pages, self.onload_pages, self.max_tokens, self.derived_onload_pages
        );
        let _ = writeln!(s, "  cache: {:.0} MiB", self.cache_mib);
        let _ = writeln!(s, "Workbench");
        let _ = writeln!(
            s,
            "  UVQK buffer per layer: {:.0} MiB",
            self.uvqk_mib_per_layer
        );
        let _ = writeln!(
            s,
            "  output buffer per layer: {:.0} MiB",
            self.output_mib_per_layer
        );
        let _ = writeln!(s, "  per layer: {:.0} MiB", self.workbench_mib_per_layer);
        let _ = writeln!(s, "  workbench: {:.0} MiB", self.workbench_mib);
        let _ = writeln!(s, "Weights and runtime: {:.0} MiB", self.residual_mib);
        let _ = writeln!(
            s,
            "Total: {:.0} MiB ({:.2} GiB)",
            self.total_mib, self.total_gib
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_dimensions() {
        let kv = KvConfig {
            num_layers: 1,
            num_heads: 1,
            head_dim: 1,
            page_size: 4,
            chunk_size: 4,
            device_pages: 1,
            onload_pages: 0,
            bytes_per_element: 1,
            offload_quota: 4,
            host_capacity: 0,
        };
        let f = memory_footprint(&kv, 1, 1, None, 0.0);
        assert_eq!(f.cache_bytes, 2 * 4);
        assert_eq!(f.uvqk_bytes_per_layer, 4);
        assert_eq!(f.output_bytes_per_layer, 2);
    }

    #[test]
    fn onload_override_and_derivation() {
        let f = memory_footprint(&KvConfig::default(), 8, 40_008, Some(10_002), 0.0);
        assert_eq!(f.onload_pages, 10_002);
        assert_eq!(f.derived_onload_pages, 10_002);
        assert_eq!(f.cache_mib, 25_481.0);
    }
}
