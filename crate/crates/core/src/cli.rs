//! Subcommand implementations behind the `ppsim` binary.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 configuration or trace-spec
//! error, 3 trace error (missing, unreadable, or malformed trace).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{LoadError, RunConfig};
use crate::engine::{Engine, EngineOptions, PrefetcherKind, RunReport, TrainingRecord};
use crate::metrics::Comparison;
use crate::trace::{generate_trace, parse_trace, write_trace, MemoryAccess, TraceError};

/// Environment variable bounding the worker threads used by `compare`.
pub const THREADS_ENV: &str = "PPSIM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Trace(String),
    #[error("output error: {0}")]
    Output(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Output(_) => 1,
            CliError::Config(_) => 2,
            CliError::Trace(_) => 3,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub format: OutputFormat,
    pub prefetcher: Option<PrefetcherKind>,
    /// Training log destination (CSV).
    pub debug_perceptron: Option<PathBuf>,
    /// Per-access latency log destination (CSV).
    pub latency_log: Option<PathBuf>,
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn trace_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Trace(format!("{}: {e}", path.display()))
}

pub fn open_trace(
    path: &Path,
) -> Result<impl Iterator<Item = Result<MemoryAccess, TraceError>>, CliError> {
    let file = File::open(path).map_err(|e| trace_error(path, e))?;
    parse_trace(file).map_err(|e| trace_error(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<MemoryAccess>, CliError> {
    open_trace(path)?.collect::<Result<_, _>>().map_err(|e| trace_error(path, e))
}

/// Writes the trace described by the `[trace]` section of `spec_path`.
/// Returns the number of records written.
pub fn cmd_gen(spec_path: &Path, out_path: &Path) -> Result<usize, CliError> {
    let cfg = load_config(Some(spec_path))?;
    let spec = cfg
        .trace
        .ok_or_else(|| CliError::Config(format!("{}: no [trace] section", spec_path.display())))?;
    let records: Vec<MemoryAccess> =
        generate_trace(&spec).map_err(|e| CliError::Config(e.to_string()))?.collect();
    let mut out = BufWriter::new(File::create(out_path)?);
    write_trace(&mut out, &records)?;
    out.flush()?;
    Ok(records.len())
}

pub fn render_report(report: &RunReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => report.to_json() + "\n",
        OutputFormat::Csv => format!("{}\n{}\n", RunReport::CSV_HEADER, report.csv_row()),
        OutputFormat::Text => render_text(report),
    }
}

fn render_text(r: &RunReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    writeln!(s, "prefetcher:           {}", r.prefetcher.label()).unwrap();
    writeln!(s, "accesses:             {}", r.accesses).unwrap();
    for l in &r.levels {
        writeln!(s, "{:<6} hits/misses:   {}/{}", l.name, l.demand_hits, l.demand_misses).unwrap();
    }
    writeln!(s, "triggers:             {}", r.triggers).unwrap();
    writeln!(
        s,
        "suggestions:          {} issued, {} accepted, {} denied",
        r.suggestions_issued, r.suggestions_accepted, r.suggestions_denied
    )
    .unwrap();
    writeln!(s, "prefetch fills:       {} ({} correct, {} wrong)", r.prefetch_fills, r.prefetch_correct, r.prefetch_wrong)
        .unwrap();
    match r.amat_cycles {
        Some(a) => writeln!(s, "AMAT (cycles):        {a:.3}").unwrap(),
        None => writeln!(s, "AMAT (cycles):        -").unwrap(),
    }
    if let Some(w) = r.final_weights {
        writeln!(s, "weights:              {w:?}").unwrap();
    }
    s
}

fn write_csv_file(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_run(config_path: Option<&Path>, trace_path: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(kind) = opts.prefetcher {
        cfg.engine.prefetcher = kind;
    }
    let engine_opts = EngineOptions {
        record_events: false,
        record_latencies: opts.latency_log.is_some(),
        record_training: opts.debug_perceptron.is_some(),
    };
    let mut engine =
        Engine::with_options(cfg.engine, engine_opts).map_err(|e| CliError::Config(e.to_string()))?;
    for access in open_trace(trace_path)? {
        engine.step(&access.map_err(|e| trace_error(trace_path, e))?);
    }
    engine.flush();
    if let Some(path) = &opts.debug_perceptron {
        let log = engine.training_log().unwrap_or_default();
        write_csv_file(path, TrainingRecord::CSV_HEADER, log.iter().map(TrainingRecord::csv_row))?;
    }
    if let Some(path) = &opts.latency_log {
        let lat = engine.latencies().unwrap_or_default();
        write_csv_file(path, "access,latency_cycles", lat.iter().enumerate().map(|(i, l)| format!("{i},{l}")))?;
    }
    Ok(engine.report())
}

pub fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs S, SP, M and MP over one shared trace, in parallel. Reports come
/// back in that order regardless of scheduling.
pub fn compare_reports(cfg: &RunConfig, trace: &[MemoryAccess]) -> Result<Vec<RunReport>, CliError> {
    let run_one = |kind: PrefetcherKind| -> Result<RunReport, CliError> {
        let engine_cfg = cfg.engine.clone().with_prefetcher(kind);
        crate::engine::run_accesses(&engine_cfg, trace).map_err(|e| CliError::Config(e.to_string()))
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| PrefetcherKind::COMPARED.par_iter().map(|&k| run_one(k)).collect())
}

pub fn cmd_compare(config_path: Option<&Path>, trace_path: &Path) -> Result<Comparison, CliError> {
    let cfg = load_config(config_path)?;
    let trace = read_trace(trace_path)?;
    let reports = compare_reports(&cfg, &trace)?;
    Ok(Comparison::new(&reports))
}

pub fn render_comparison(c: &Comparison, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => c.to_json() + "\n",
        OutputFormat::Csv => c.to_csv(),
        OutputFormat::Text => c.to_markdown(),
    }
}
