use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tierkv::footprint::memory_footprint;
use tierkv::oracle;
use tierkv::report::{render_csv_table, RunReport};
use tierkv::sim::{run_trace, sweep, sweep_csv, RunOptions};
use tierkv::workload::{
    generate_trace, load_trace, preset, save_trace, trace_to_string, TraceRecord,
};
use tierkv::RunConfig;

#[derive(Parser)]
#[command(name = "tierkv", version, about = "Two-tier KV cache simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace and write a report.
    Run(RunArgs),
    /// Replay a trace once per parameter value and emit a CSV table.
    Sweep(SweepArgs),
    /// Check cached inference against full recompute.
    Verify(VerifyArgs),
    /// Print the device memory budget.
    Footprint(FootprintArgs),
    /// Generate a synthetic trace.
    GenTrace(GenArgs),
    /// Render a JSON or CSV report as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct Source {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL trace file.
    #[arg(long, conflicts_with = "preset")]
    trace: Option<PathBuf>,
    /// Built-in workload preset (kuairand1k, mt).
    #[arg(long)]
    preset: Option<String>,
    /// Seed for the preset generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "hierarchical")]
    mode: String,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Storage backend: value, tag or null.
    #[arg(long, default_value = "null")]
    backend: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    src: Source,
    /// Report JSON path; the CSV row goes next to it with a .csv extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the pipeline event trace as JSONL.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Write the final per-user page map as JSON.
    #[arg(long)]
    dump_pages: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    src: Source,
    /// chunk_size, device_pages or batch_size.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// CSV output path, stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Requests in the end-to-end replay.
    #[arg(long, default_value_t = 200)]
    requests: usize,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct FootprintArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 40_008)]
    maxseq: usize,
    /// Onload staging pages; defaults to the config value.
    #[arg(long)]
    onload_pages: Option<usize>,
    /// Weights and runtime allowance in MiB.
    #[arg(long, default_value_t = 2187.0)]
    residual: f64,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "kuairand1k")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    requests: Option<usize>,
    /// Emit token ids drawn from this vocabulary.
    #[arg(long)]
    vocab: Option<usize>,
    /// Output path, stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON or CSV file.
    input: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_source(src: &Source) -> Result<(RunConfig, Vec<TraceRecord>, RunOptions)> {
    let cfg = load_config(src.config.as_deref()).context("bad config")?;
    if src.batch == 0 {
        bail!("--batch must be at least 1");
    }
    let trace = match (&src.trace, &src.preset) {
        (Some(p), _) => load_trace(p).context("bad trace")?,
        (None, Some(name)) => {
            let mut g = preset(name)?;
            g.seed = src.seed;
            if src.backend == "value" {
                g.vocab = cfg.model.vocab_size;
            }
            generate_trace(&g)?
        }
        (None, None) => bail!("either --trace or --preset is required"),
    };
    let opts = RunOptions {
        mode: src.mode.clone(),
        backend: src.backend.clone(),
        batch_size: src.batch,
        record_events: false,
    };
    Ok((cfg, trace, opts))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let (cfg, trace, mut opts) = load_source(&a.src)?;
    opts.record_events = a.events.is_some();
    let out = run_trace(&cfg, &trace, &opts)?;
    if let Some(p) = &a.out {
        write(p, &out.report.to_json())?;
        write(&p.with_extension("csv"), &out.report.to_csv())?;
    }
    if let Some(p) = &a.events {
        let mut buf = Vec::new();
        for e in &out.events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        fs::write(p, buf).with_context(|| format!("cannot write {}", p.display()))?;
    }
    if let Some(p) = &a.dump_pages {
        write(p, &(serde_json::to_string_pretty(&out.page_map)? + "\n"))?;
    }
    print!("{}", out.report.render_table());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (cfg, trace, opts) = load_source(&a.src)?;
    let rows = sweep(&a.param, &a.values, &cfg, &trace, &opts)
        .with_context(|| format!("sweep over {}", a.param))?;
    let csv = sweep_csv(&a.param, &rows);
    match &a.out {
        Some(p) => write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_verify(a: VerifyArgs) -> Result<bool> {
    if a.trials == 0 {
        eprintln!("warning: 0 trials requested, oracle check is vacuous");
    }
    let split = oracle::split_trials(a.trials, a.seed, a.inject_fault)?;
    println!(
        "split-point trials: {}  max |dlogit| = {split:.3e}",
        a.trials
    );
    let (e2e, evictions) = oracle::end_to_end(a.requests, a.seed, 4)?;
    println!(
        "end-to-end replay: {} requests, {evictions} evictions  max |dlogit| = {e2e:.3e}",
        a.requests
    );
    let worst = split.max(e2e);
    let ok = worst <= oracle::TOLERANCE;
    println!(
        "max |dlogit| = {worst:.3e} {} {:.0e}",
        if ok { "<=" } else { ">" },
        oracle::TOLERANCE
    );
    Ok(ok)
}

fn cmd_footprint(a: FootprintArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref()).context("bad config")?;
    if a.batch == 0 || a.maxseq == 0 || a.residual < 0.0 || a.onload_pages == Some(0) {
        bail!("footprint dimensions must be positive");
    }
    cfg.kv.validate()?;
    let f = memory_footprint(&cfg.kv, a.batch, a.maxseq, a.onload_pages, a.residual);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&f)?);
    } else {
        print!("{}", f.render());
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut g = preset(&a.preset)?;
    g.seed = a.seed;
    if let Some(u) = a.users {
        g.num_users = u;
    }
    if let Some(r) = a.requests {
        g.total_requests = r;
    }
    if let Some(v) = a.vocab {
        g.vocab = v;
    }
    let t = generate_trace(&g)?;
    match &a.out {
        Some(p) => Ok(save_trace(p, &t)?),
        None => {
            print!("{}", trace_to_string(&t));
            Ok(())
        }
    }
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)
        .with_context(|| format!("cannot read {}", a.input.display()))?;
    let table = if text.trim_start().starts_with('{') {
        RunReport::from_json(&text)
            .with_context(|| format!("bad report {}", a.input.display()))?
            .render_table()
    } else {
        render_csv_table(&text).with_context(|| format!("bad report {}", a.input.display()))?
    };
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Footprint(a) => cmd_footprint(a).map(|_| true),
        Command::GenTrace(a) => cmd_gen(a).map(|_| true),
        Command::Report(a) => cmd_report(a).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
