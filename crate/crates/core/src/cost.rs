//! Simulated-time cost model. All durations are in milliseconds.
//!
//! The default coefficients are calibration values chosen so that the
//! reference synthetic workloads land in a plausible regime for an 8-layer
//! model on a single accelerator. They are not measurements.

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Host/device bus bandwidth, GB/s (1e9 bytes per second).
    pub bus_gbps: f64,
    /// Fixed setup cost of one bus transaction, microseconds.
    pub tx_setup_us: f64,
    /// Host-side copy bandwidth into pinned buffers, GB/s.
    pub host_copy_gbps: f64,
    /// Scatter/gather kernel cost per page per layer, microseconds.
    pub page_op_us: f64,
    /// Attention cost per (new token, context token) pair per layer.
    pub k_attn_ms: f64,
    /// Projection and MLP cost per processed token per layer.
    pub k_lin_ms: f64,
    /// Fixed kernel-launch cost per layer.
    pub layer_fixed_ms: f64,
    /// How many times slower one request runs alone than its share of a
    /// full batch. Batch compute is `max(sum, parallel_factor * longest)`.
    pub parallel_factor: f64,
    pub meta_fixed_ms: f64,
    pub meta_per_request_ms: f64,
    pub strip_fixed_ms: f64,
    pub strip_per_request_ms: f64,
    pub embed_fixed_ms: f64,
    pub embed_per_token_ms: f64,
    pub layout_fixed_ms: f64,
    pub layout_per_token_ms: f64,
    pub await_meta_ms: f64,
    pub update_fixed_ms: f64,
    pub update_per_onload_ms: f64,
    pub offload_submit_ms: f64,
    pub post_fixed_ms: f64,
    pub post_per_request_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            bus_gbps: 25.0,
            tx_setup_us: 10.0,
            host_copy_gbps: 50.0,
            page_op_us: 0.5,
            k_attn_ms: 5.0e-8,
            k_lin_ms: 2.0e-5,
            layer_fixed_ms: 0.02,
            parallel_factor: 1.0,
            meta_fixed_ms: 0.08,
            meta_per_request_ms: 0.003,
            strip_fixed_ms: 0.05,
            strip_per_request_ms: 0.06,
            embed_fixed_ms: 1.0,
            embed_per_token_ms: 1.1e-4,
            layout_fixed_ms: 1.5,
            layout_per_token_ms: 8.0e-5,
            await_meta_ms: 0.1,
            update_fixed_ms: 0.05,
            update_per_onload_ms: 0.08,
            offload_submit_ms: 0.03,
            post_fixed_ms: 0.45,
            post_per_request_ms: 0.04,
        }
    }
}

macro_rules! cost_fields {
    ($m:ident) => {
        $m!(
            bus_gbps,
            tx_setup_us,
            host_copy_gbps,
            page_op_us,
            k_attn_ms,
            k_lin_ms,
            layer_fixed_ms,
            parallel_factor,
            meta_fixed_ms,
            meta_per_request_ms,
            strip_fixed_ms,
            strip_per_request_ms,
            embed_fixed_ms,
            embed_per_token_ms,
            layout_fixed_ms,
            layout_per_token_ms,
            await_meta_ms,
            update_fixed_ms,
            update_per_onload_ms,
            offload_submit_ms,
            post_fixed_ms,
            post_per_request_ms
        )
    };
}

impl CostModel {
    pub(crate) fn set(&mut self, name: &str, value: f64) -> Result<(), String> {
        macro_rules! assign {
            ($($f:ident),*) => {
                match name {
                    $(stringify!($f) => self.$f = value,)*
                    _ => return Err(format!("unknown cost key {name:?}")),
                }
            };
        }
        cost_fields!(assign);
        Ok(())
    }

    pub(crate) fn entries(&self) -> Vec<(&'static str, f64)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((stringify!($f), self.$f)),*] };
        }
        cost_fields!(list)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in self.entries() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "cost.{name} must be finite and >= 0"
                )));
            }
        }
        if self.bus_gbps == 0.0 || self.host_copy_gbps == 0.0 {
            return Err(ConfigError::Invalid("bandwidths must be positive".into()));
        }
        if self.parallel_factor < 1.0 {
            return Err(ConfigError::Invalid(
                "cost.parallel_factor must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// One bus transaction of `bytes`.
    pub fn bus_ms(&self, bytes: usize) -> f64 {
        self.tx_setup_us * 1e-3 + bytes as f64 / (self.bus_gbps * 1e6)
    }

    /// Host-side sequential copy of `bytes`.
    pub fn host_copy_ms(&self, bytes: usize) -> f64 {
        bytes as f64 / (self.host_copy_gbps * 1e6)
    }

    pub fn page_ops_ms(&self, pages: usize) -> f64 {
        pages as f64 * self.page_op_us * 1e-3
    }

    /// Batch-level time for independent per-request works on one device.
    pub fn batched(&self, works: impl IntoIterator<Item = f64>) -> f64 {
        let (sum, max) = works
            .into_iter()
            .fold((0.0f64, 0.0f64), |(s, m), w| (s + w, m.max(w)));
        sum.max(self.parallel_factor * max)
    }
}
