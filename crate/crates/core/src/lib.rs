//! Two-tier KV cache for generative-recommendation serving.
//!
//! A paged device tier and a chunked host tier, an LRU cache manager, a
//! simulated transfer pipeline, a small reference model used as the
//! correctness oracle, and a trace-driven simulator.

pub mod config;
pub mod cost;
pub mod engine;
pub mod footprint;
pub mod manager;
pub mod mode;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod sim;
pub mod store;
pub mod types;
pub mod workload;

pub use config::{KvConfig, ModelConfig, RunConfig};
pub use cost::CostModel;
pub use engine::Engine;
pub use report::RunReport;
pub use types::{Request, SequenceState, UserId};
