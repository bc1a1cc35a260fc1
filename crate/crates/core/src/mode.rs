//! Serving modes: how much of a user's history each strategy can reuse, and
//! whether it keeps a host tier.

use std::fmt;

use crate::types::SequenceState;

/// Where a request's reusable prefix comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Reuse {
    /// Tokens already resident in device pages.
    pub device: usize,
    /// Tokens to onload from the host tier.
    pub host: usize,
}

impl Reuse {
    pub fn prefix(&self) -> usize {
        self.device + self.host
    }
}

pub trait ServingMode: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// False for the no-cache baseline: every request re-encodes its history.
    fn uses_cache(&self) -> bool;

    /// Whether completed chunks are written back to host memory.
    fn persists_to_host(&self) -> bool;

    /// Reusable prefix for a user in `state` at metadata-preparation time.
    fn resolve(&self, state: &SequenceState) -> Reuse;
}

#[derive(Debug)]
pub struct Recompute;

impl ServingMode for Recompute {
    fn name(&self) -> &'static str {
        "recompute"
    }
    fn uses_cache(&self) -> bool {
        false
    }
    fn persists_to_host(&self) -> bool {
        false
    }
    fn resolve(&self, _state: &SequenceState) -> Reuse {
        Reuse::default()
    }
}

/// Device cache only; an evicted user's history is gone.
#[derive(Debug)]
pub struct GpuOnly;

impl ServingMode for GpuOnly {
    fn name(&self) -> &'static str {
        "gpu_only"
    }
    fn uses_cache(&self) -> bool {
        true
    }
    fn persists_to_host(&self) -> bool {
        false
    }
    fn resolve(&self, state: &SequenceState) -> Reuse {
        Reuse {
            device: state.device_len,
            host: 0,
        }
    }
}

/// Device pages backed by host chunks.
#[derive(Debug)]
pub struct Hierarchical;

impl ServingMode for Hierarchical {
    fn name(&self) -> &'static str {
        "hierarchical"
    }
    fn uses_cache(&self) -> bool {
        true
    }
    fn persists_to_host(&self) -> bool {
        true
    }
    fn resolve(&self, state: &SequenceState) -> Reuse {
        if state.device_len > 0 {
            Reuse {
                device: state.device_len,
                host: 0,
            }
        } else {
            Reuse {
                device: 0,
                host: state.persisted_len,
            }
        }
    }
}

type Factory = fn() -> Box<dyn ServingMode>;

/// Modes selectable by name.
pub struct ModeRegistry {
    entries: Vec<(&'static str, Factory)>,
}

impl Default for ModeRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: Vec::new(),
        };
        r.register("recompute", || Box::new(Recompute));
        r.register("gpu_only", || Box::new(GpuOnly));
        r.register("hierarchical", || Box::new(Hierarchical));
        r
    }
}

impl ModeRegistry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn create(&self, name: &str) -> Option<Box<dyn ServingMode>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}
