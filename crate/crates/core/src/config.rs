//! Structural configuration and the plain-text `key = value` config file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Structural constants of the two-tier store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    /// Tokens per device page.
    pub page_size: usize,
    /// Tokens per host chunk; a whole number of pages.
    pub chunk_size: usize,
    /// Primary device cache capacity in pages.
    pub device_pages: usize,
    /// Onload staging region in pages.
    pub onload_pages: usize,
    pub bytes_per_element: usize,
    /// Limit on tokens held by in-flight offload tasks.
    pub offload_quota: usize,
    /// Host capacity in chunks, 0 = unbounded.
    pub host_capacity: usize,
}

impl Default for KvConfig {
    fn default() -> Self {
        Self {
            num_layers: 8,
            num_heads: 4,
            head_dim: 128,
            page_size: 32,
            chunk_size: 1024,
            device_pages: 40_960,
            onload_pages: 10_008,
            bytes_per_element: 2,
            offload_quota: 65_536,
            host_capacity: 0,
        }
    }
}

impl KvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 {
            return bad("num_layers, num_heads and head_dim must be positive");
        }
        if self.page_size == 0 {
            return bad("page_size must be >= 1");
        }
        if self.chunk_size < self.page_size || !self.chunk_size.is_multiple_of(self.page_size) {
            return bad("chunk_size must be a positive multiple of page_size");
        }
        if self.device_pages == 0 {
            return bad("device_pages must be >= 1");
        }
        if self.offload_quota < self.chunk_size {
            return bad("offload_quota must admit at least one chunk");
        }
        if self.bytes_per_element == 0 {
            return bad("bytes_per_element must be positive");
        }
        Ok(())
    }

    /// Hidden width `H * D`.
    pub fn width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Bytes of K plus V for one token in one layer.
    pub fn kv_bytes_per_token_layer(&self) -> usize {
        2 * self.width() * self.bytes_per_element
    }

    pub fn pages_per_chunk(&self) -> usize {
        self.chunk_size / self.page_size
    }
}

/// Reference model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1024,
            seed: 0,
        }
    }
}

/// Everything a config file can set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kv: KvConfig,
    pub model: ModelConfig,
    pub cost: CostModel,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    /// Cost-model keys are prefixed with `cost.`, model keys with `model.`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|msg| ConfigError::Parse { line: line_no, msg })?;
        }
        cfg.kv.validate()?;
        cfg.cost.validate()?;
        if cfg.model.vocab_size == 0 {
            return Err(ConfigError::Invalid(
                "model.vocab_size must be positive".into(),
            ));
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn int(v: &str) -> Result<usize, String> {
            v.replace('_', "")
                .parse()
                .map_err(|_| format!("expected a non-negative integer, got {v:?}"))
        }
        let kv = &mut self.kv;
        match key {
            "num_layers" => kv.num_layers = int(value)?,
            "num_heads" => kv.num_heads = int(value)?,
            "head_dim" => kv.head_dim = int(value)?,
            "page_size" => kv.page_size = int(value)?,
            "chunk_size" => kv.chunk_size = int(value)?,
            "device_pages" => kv.device_pages = int(value)?,
            "onload_pages" => kv.onload_pages = int(value)?,
            "bytes_per_element" => kv.bytes_per_element = int(value)?,
            "offload_quota" => kv.offload_quota = int(value)?,
            "host_capacity" => kv.host_capacity = int(value)?,
            "model.vocab_size" => self.model.vocab_size = int(value)?,
            "model.seed" => self.model.seed = int(value)? as u64,
            _ => match key.strip_prefix("cost.") {
                Some(name) => {
                    let v: f64 = value
                        .parse()
                        .map_err(|_| format!("expected a number for {key}, got {value:?}"))?;
                    self.cost.set(name, v)?
                }
                None => return Err(format!("unknown key {key:?}")),
            },
        }
        Ok(())
    }

    /// Renders the config in the same `key = value` format `parse` reads.
    pub fn to_text(&self) -> String {
        let kv = &self.kv;
        let mut out = String::new();
        for (k, v) in [
            ("num_layers", kv.num_layers),
            ("num_heads", kv.num_heads),
            ("head_dim", kv.head_dim),
            ("page_size", kv.page_size),
            ("chunk_size", kv.chunk_size),
            ("device_pages", kv.device_pages),
            ("onload_pages", kv.onload_pages),
            ("bytes_per_element", kv.bytes_per_element),
            ("offload_quota", kv.offload_quota),
            ("host_capacity", kv.host_capacity),
            ("model.vocab_size", self.model.vocab_size),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!("model.seed = {}\n", self.model.seed));
        for (k, v) in self.cost.entries() {
            out.push_str(&format!("cost.{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = KvConfig::default();
        assert_eq!((c.num_layers, c.num_heads, c.head_dim), (8, 4, 128));
        assert_eq!(
            (c.page_size, c.chunk_size, c.device_pages),
            (32, 1024, 40_960)
        );
        c.validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_comments() {
        let cfg = RunConfig::parse(
            "# toy\nnum_layers = 2\npage_size=4\nchunk_size = 8 # two pages\n\ncost.bus_gbps = 12.5\nmodel.seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.kv.num_layers, 2);
        assert_eq!(cfg.kv.chunk_size, 8);
        assert_eq!(cfg.cost.bus_gbps, 12.5);
        assert_eq!(cfg.model.seed, 7);
    }

    #[test]
    fn rejects_unknown_key_with_line() {
        let err = RunConfig::parse("num_layers = 2\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_chunk_not_multiple_of_page() {
        let err = RunConfig::parse("page_size = 32\nchunk_size = 48\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn rejects_quota_below_chunk() {
        assert!(RunConfig::parse("offload_quota = 512\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.kv.device_pages = 123;
        cfg.cost.tx_setup_us = 3.5;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
