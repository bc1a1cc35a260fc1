//! Run metrics and their JSON, CSV and table renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: u32 = 1;

pub const STEP_LABELS: [&str; 9] = [
    "Step 1-2. Prepare Metadata",
    "Step 3. Strip Tokens",
    "Step 4. Embedding",
    "Step 5. Data Layout",
    "Step 6. Await Metadata",
    "Step 7. Update Metadata",
    "Step 8. HSTU Inference",
    "Step 9. Offload KV",
    "Step 10. Postprocess",
];

/// Index of step 8 in [`STEP_LABELS`].
pub const STEP_INFERENCE: usize = 6;

/// Token counts behind the hit ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitAccumulator {
    /// History tokens required by requests.
    pub history: u64,
    /// Of those, served from resident device pages.
    pub device: u64,
    /// Of those, onloaded from the host tier.
    pub host: u64,
}

impl HitAccumulator {
    pub fn add(&mut self, history: usize, device: usize, host: usize) {
        self.history += history as u64;
        self.device += device as u64;
        self.host += host as u64;
    }
}

/// `(gpu, total)` hit ratios; 1.0 when no request had any history.
pub fn hit_ratios(acc: &HitAccumulator) -> (f64, f64) {
    if acc.history == 0 {
        return (1.0, 1.0);
    }
    let h = acc.history as f64;
    (acc.device as f64 / h, (acc.device + acc.host) as f64 / h)
}

/// Tokens entering fresh encoding for one request.
pub fn tokens_processed(history: usize, p_pre: usize, delta: usize, candidates: usize) -> usize {
    history - p_pre + delta + candidates
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTime {
    pub label: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub mode: String,
    pub backend: String,
    pub batch_size: usize,
    pub requests: u64,
    pub batches: u64,
    pub rejected_batches: u64,
    /// Mean per-batch time of each step on the compute lane.
    pub steps: Vec<StepTime>,
    /// Mean per-batch step 8 stall on layer readiness.
    pub wait_ms: f64,
    /// Mean per-batch step 8 kernel time.
    pub comp_ms: f64,
    /// Mean per-batch latency, the sum of the step times.
    pub avg_latency_ms: f64,
    pub total_latency_ms: f64,
    /// Simulated time at which the last batch finished.
    pub makespan_ms: f64,
    pub gpu_hit_ratio: f64,
    pub total_hit_ratio: f64,
    pub hits: HitAccumulator,
    pub tokens_processed: u64,
    pub evictions: u64,
    pub tail_tokens_lost: u64,
    pub peak_device_pages: usize,
    pub onload_chunks: u64,
    pub offload_tasks: u64,
    pub offload_rejections: u64,
    pub peak_offload_in_flight: usize,
}

impl RunReport {
    pub fn empty(mode: &str, backend: &str, batch_size: usize) -> Self {
        Self {
            version: REPORT_VERSION,
            mode: mode.to_string(),
            backend: backend.to_string(),
            batch_size,
            requests: 0,
            batches: 0,
            rejected_batches: 0,
            steps: STEP_LABELS
                .iter()
                .map(|l| StepTime {
                    label: l.to_string(),
                    ms: 0.0,
                })
                .collect(),
            wait_ms: 0.0,
            comp_ms: 0.0,
            avg_latency_ms: 0.0,
            total_latency_ms: 0.0,
            makespan_ms: 0.0,
            gpu_hit_ratio: 1.0,
            total_hit_ratio: 1.0,
            hits: HitAccumulator::default(),
            tokens_processed: 0,
            evictions: 0,
            tail_tokens_lost: 0,
            peak_device_pages: 0,
            onload_chunks: 0,
            offload_tasks: 0,
            offload_rejections: 0,
            peak_offload_in_flight: 0,
        }
    }

    pub fn step_ms(&self, idx: usize) -> f64 {
        self.steps[idx].ms
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Column names, in the fixed order used by [`RunReport::csv_row`].
    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = [
            "report_version",
            "mode",
            "backend",
            "batch_size",
            "requests",
            "batches",
            "rejected_batches",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(STEP_LABELS.iter().map(|s| s.to_string()));
        h.extend(
            [
                "wait_ms",
                "comp_ms",
                "avg_latency_ms",
                "total_latency_ms",
                "makespan_ms",
                "gpu_hit_ratio",
                "total_hit_ratio",
                "tokens_processed",
                "evictions",
                "tail_tokens_lost",
                "peak_device_pages",
                "onload_chunks",
                "offload_tasks",
                "offload_rejections",
                "peak_offload_in_flight",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.version.to_string(),
            self.mode.clone(),
            self.backend.clone(),
            self.batch_size.to_string(),
            self.requests.to_string(),
            self.batches.to_string(),
            self.rejected_batches.to_string(),
        ];
        r.extend(self.steps.iter().map(|s| fmt_f(s.ms)));
        r.extend([
            fmt_f(self.wait_ms),
            fmt_f(self.comp_ms),
            fmt_f(self.avg_latency_ms),
            fmt_f(self.total_latency_ms),
            fmt_f(self.makespan_ms),
            fmt_f(self.gpu_hit_ratio),
            fmt_f(self.total_hit_ratio),
            self.tokens_processed.to_string(),
            self.evictions.to_string(),
            self.tail_tokens_lost.to_string(),
            self.peak_device_pages.to_string(),
            self.onload_chunks.to_string(),
            self.offload_tasks.to_string(),
            self.offload_rejections.to_string(),
            self.peak_offload_in_flight.to_string(),
        ]);
        r
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        write_csv(&Self::csv_header(), &[self.csv_row()])
    }

    /// Two-column table of step times and headline metrics.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("mode".into(), self.mode.clone()),
            ("batch size".into(), self.batch_size.to_string()),
            ("requests".into(), self.requests.to_string()),
        ];
        rows.extend(
            self.steps
                .iter()
                .map(|s| (s.label.clone(), format!("{:.3}", s.ms))),
        );
        rows.extend([
            ("Wait Time".into(), format!("{:.3}", self.wait_ms)),
            ("Comp Time".into(), format!("{:.3}", self.comp_ms)),
            (
                "Average Latency".into(),
                format!("{:.3}", self.avg_latency_ms),
            ),
            (
                "GPU Hit Ratio".into(),
                format!("{:.2}%", self.gpu_hit_ratio * 100.0),
            ),
            (
                "Total Hit Ratio".into(),
                format!("{:.2}%", self.total_hit_ratio * 100.0),
            ),
            ("tokens processed".into(), self.tokens_processed.to_string()),
            ("evictions".into(), self.evictions.to_string()),
            ("tail tokens lost".into(), self.tail_tokens_lost.to_string()),
        ]);
        render_pairs(&rows)
    }
}

/// Fixed-precision float formatting for CSV.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn write_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}

fn render_pairs(rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<w$}  {v:>12}");
    }
    out
}

/// Renders CSV text as an aligned table.
pub fn render_csv_table(text: &str) -> Result<String, csv::Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let rows: Vec<Vec<String>> = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    let mut out = String::new();
    if rows.len() == 1 {
        let pairs: Vec<_> = header
            .iter()
            .cloned()
            .zip(rows[0].iter().cloned())
            .collect();
        return Ok(render_pairs(&pairs));
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r.get(i).map_or(0, |c| c.len()))
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(out, "{}", line(&header));
    for r in &rows {
        let _ = writeln!(out, "{}", line(r));
    }
    Ok(out)
}
