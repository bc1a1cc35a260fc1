//! Trace replay and parameter sweeps.

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::engine::{Engine, EngineError, RequestOutput};
use crate::manager::PageMapEntry;
use crate::mode::ModeRegistry;
use crate::pipeline::PipelineEvent;
use crate::report::{write_csv, RunReport};
use crate::types::UserId;
use crate::workload::{batchify, TraceRecord, WorkloadError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error("unknown sweep parameter {0:?} (expected chunk_size, device_pages or batch_size)")]
    UnknownParam(String),
    #[error("invalid value {value} for {param}: {msg}")]
    InvalidValue {
        param: String,
        value: usize,
        msg: String,
    },
    #[error("batch size must be positive")]
    ZeroBatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: String,
    pub backend: String,
    pub batch_size: usize,
    pub record_events: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: "hierarchical".into(),
            backend: "null".into(),
            batch_size: 8,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub events: Vec<PipelineEvent>,
    pub outputs: Vec<RequestOutput>,
    pub page_map: std::collections::BTreeMap<UserId, PageMapEntry>,
}

pub fn run_trace(
    cfg: &RunConfig,
    trace: &[TraceRecord],
    opts: &RunOptions,
) -> Result<RunOutput, SimError> {
    cfg.kv.validate()?;
    cfg.cost.validate()?;
    if opts.batch_size == 0 {
        return Err(SimError::ZeroBatch);
    }
    let mode = ModeRegistry::default()
        .create(&opts.mode)
        .ok_or_else(|| SimError::UnknownMode(opts.mode.clone()))?;
    let mut engine = Engine::new(cfg.clone(), mode, &opts.backend, opts.record_events)?;
    for batch in batchify(trace, opts.batch_size) {
        engine.submit_batch(&batch)?;
    }
    let mut report = engine.report();
    report.batch_size = opts.batch_size;
    Ok(RunOutput {
        report,
        events: engine.pipeline().events().to_vec(),
        outputs: engine.outputs().to_vec(),
        page_map: engine.manager().page_map(),
    })
}

pub const SWEEP_PARAMS: [&str; 3] = ["chunk_size", "device_pages", "batch_size"];

/// One run per value with everything else fixed.
pub fn sweep(
    param: &str,
    values: &[usize],
    cfg: &RunConfig,
    trace: &[TraceRecord],
    opts: &RunOptions,
) -> Result<Vec<(usize, RunReport)>, SimError> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(SimError::UnknownParam(param.to_string()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        let mut o = opts.clone();
        match param {
            "chunk_size" => {
                c.kv.chunk_size = v;
                c.kv.offload_quota = c.kv.offload_quota.max(v);
            }
            "device_pages" => c.kv.device_pages = v,
            _ => o.batch_size = v,
        }
        let check = match param {
            "batch_size" if v == 0 => Err("batch size must be positive".to_string()),
            "batch_size" => Ok(()),
            _ => c.kv.validate().map_err(|e| e.to_string()),
        };
        check.map_err(|msg| SimError::InvalidValue {
            param: param.to_string(),
            value: v,
            msg,
        })?;
        rows.push((v, run_trace(&c, trace, &o)?.report));
    }
    Ok(rows)
}

/// CSV with the swept value as the first column followed by the report columns.
pub fn sweep_csv(param: &str, rows: &[(usize, RunReport)]) -> String {
    let mut header = vec![param.to_string()];
    header.extend(RunReport::csv_header());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(v, r)| {
            let mut row = vec![v.to_string()];
            row.extend(r.csv_row());
            row
        })
        .collect();
    write_csv(&header, &body)
}
