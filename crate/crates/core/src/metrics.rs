//! Prefetch quality metrics computed from `RunReport`s, means over suites of
//! runs, and comparison-table emitters (Markdown, CSV, JSON).

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{EngineEvent, PrefetcherKind, RunReport};
use crate::perceptron::Verdict;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no prefetch fills")]
    NoFills,
    #[error("no suggestions issued")]
    NoSuggestions,
    #[error("no demand accesses at level {0}")]
    NoAccesses(usize),
    #[error("empty suite")]
    EmptySuite,
    #[error("geometric mean needs positive values")]
    NonPositive,
}

pub type MetricResult = Result<f64, MetricsError>;

pub fn prefetch_correct_rate(r: &RunReport) -> MetricResult {
    if r.prefetch_fills == 0 {
        return Err(MetricsError::NoFills);
    }
    Ok(r.prefetch_correct as f64 / r.prefetch_fills as f64)
}

pub fn prefetch_error_rate(r: &RunReport) -> MetricResult {
    if r.prefetch_fills == 0 {
        return Err(MetricsError::NoFills);
    }
    Ok(r.prefetch_wrong as f64 / r.prefetch_fills as f64)
}

pub fn deny_rate(r: &RunReport) -> MetricResult {
    if r.suggestions_issued == 0 {
        return Err(MetricsError::NoSuggestions);
    }
    Ok(r.suggestions_denied as f64 / r.suggestions_issued as f64)
}

pub fn accept_rate(r: &RunReport) -> MetricResult {
    deny_rate(r).map(|d| 1.0 - d)
}

/// `(issued_base - issued_variant) / issued_base`; negative when the variant
/// issues more.
pub fn suggestion_decrease(base: &RunReport, variant: &RunReport) -> MetricResult {
    if base.suggestions_issued == 0 {
        return Err(MetricsError::NoSuggestions);
    }
    let b = base.suggestions_issued as f64;
    Ok((b - variant.suggestions_issued as f64) / b)
}

pub fn hit_rate(r: &RunReport, level: usize) -> MetricResult {
    let l = r.levels.get(level).ok_or(MetricsError::NoAccesses(level))?;
    if l.demand_accesses == 0 {
        return Err(MetricsError::NoAccesses(level));
    }
    Ok(l.demand_hits as f64 / l.demand_accesses as f64)
}

/// Hit rate at the prefetching level.
pub fn prefetch_level_hit_rate(r: &RunReport) -> MetricResult {
    hit_rate(r, r.prefetch_level)
}

pub fn arithmetic_mean(values: &[f64]) -> MetricResult {
    if values.is_empty() {
        return Err(MetricsError::EmptySuite);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn geometric_mean(values: &[f64]) -> MetricResult {
    if values.is_empty() {
        return Err(MetricsError::EmptySuite);
    }
    if values.iter().any(|v| *v <= 0.0) {
        return Err(MetricsError::NonPositive);
    }
    Ok((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Arithmetic,
    Geometric,
}

/// A named set of runs (one per benchmark).
#[derive(Debug, Clone, Default)]
pub struct Suite {
    pub name: String,
    pub runs: Vec<(String, RunReport)>,
}

impl Suite {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), runs: Vec::new() }
    }

    pub fn push(&mut self, benchmark: impl Into<String>, report: RunReport) {
        self.runs.push((benchmark.into(), report));
    }

    /// Mean of a metric over the runs where it is defined.
    pub fn mean<F>(&self, metric: F, kind: MeanKind) -> MetricResult
    where
        F: Fn(&RunReport) -> MetricResult,
    {
        let values: Vec<f64> = self.runs.iter().filter_map(|(_, r)| metric(r).ok()).collect();
        match kind {
            MeanKind::Arithmetic => arithmetic_mean(&values),
            MeanKind::Geometric => geometric_mean(&values),
        }
    }
}

/// Tallies rebuilt from an engine event log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub issued: u64,
    pub accepted: u64,
    pub denied: u64,
    pub fills: u64,
    pub correct: u64,
    pub wrong: u64,
}

pub fn recount(events: &[EngineEvent]) -> EventCounts {
    let mut c = EventCounts::default();
    for e in events {
        match e {
            EngineEvent::Suggested { verdict, .. } => {
                c.issued += 1;
                match verdict {
                    Verdict::Accept => c.accepted += 1,
                    Verdict::Deny => c.denied += 1,
                }
            }
            EngineEvent::Filled { .. } => c.fills += 1,
            EngineEvent::Used { .. } => c.correct += 1,
            EngineEvent::EvictedUnused { .. } | EngineEvent::FlushedUnused { .. } => c.wrong += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub variant: String,
    pub suggestions_issued: u64,
    pub prefetch_fills: u64,
    pub correct_rate: Option<f64>,
    pub error_rate: Option<f64>,
    pub deny_rate: Option<f64>,
    pub l1_hit_rate: Option<f64>,
    pub prefetch_level_hit_rate: Option<f64>,
    pub amat_cycles: Option<f64>,
}

impl MetricRow {
    pub fn of(r: &RunReport) -> Self {
        Self {
            variant: r.prefetcher.label().to_string(),
            suggestions_issued: r.suggestions_issued,
            prefetch_fills: r.prefetch_fills,
            correct_rate: prefetch_correct_rate(r).ok(),
            error_rate: prefetch_error_rate(r).ok(),
            deny_rate: deny_rate(r).ok(),
            l1_hit_rate: hit_rate(r, 0).ok(),
            prefetch_level_hit_rate: prefetch_level_hit_rate(r).ok(),
            amat_cycles: r.amat_cycles,
        }
    }
}

/// A perceptron variant against its baseline. Rate deltas are in absolute
/// fraction units (variant minus baseline; error is baseline minus variant).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub comparison: String,
    pub correct_rate_increase: Option<f64>,
    pub error_rate_decrease: Option<f64>,
    pub deny_rate: Option<f64>,
    pub suggestion_decrease: Option<f64>,
    pub prefetch_fill_decrease: Option<f64>,
    pub hit_rate_delta: Option<f64>,
}

fn diff(a: MetricResult, b: MetricResult) -> Option<f64> {
    Some(a.ok()? - b.ok()?)
}

impl DeltaRow {
    pub fn of(base: &RunReport, variant: &RunReport) -> Self {
        let fill_decrease = (base.prefetch_fills > 0).then(|| {
            (base.prefetch_fills as f64 - variant.prefetch_fills as f64) / base.prefetch_fills as f64
        });
        Self {
            comparison: format!("{} vs {}", variant.prefetcher.label(), base.prefetcher.label()),
            correct_rate_increase: diff(prefetch_correct_rate(variant), prefetch_correct_rate(base)),
            error_rate_decrease: diff(prefetch_error_rate(base), prefetch_error_rate(variant)),
            deny_rate: deny_rate(variant).ok(),
            suggestion_decrease: suggestion_decrease(base, variant).ok(),
            prefetch_fill_decrease: fill_decrease,
            hit_rate_delta: diff(prefetch_level_hit_rate(variant), prefetch_level_hit_rate(base)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<MetricRow>,
    pub deltas: Vec<DeltaRow>,
}

impl Comparison {
    /// Rows in input order; a delta for each perceptron variant whose
    /// baseline is also present.
    pub fn new(reports: &[RunReport]) -> Self {
        let rows = reports.iter().map(MetricRow::of).collect();
        let deltas = reports
            .iter()
            .filter(|r| r.prefetcher.uses_perceptron())
            .filter_map(|v| {
                let base = reports.iter().find(|b| b.prefetcher == v.prefetcher.baseline())?;
                Some(DeltaRow::of(base, v))
            })
            .collect();
        Self { rows, deltas }
    }

    pub fn report_for(reports: &[RunReport], kind: PrefetcherKind) -> Option<&RunReport> {
        reports.iter().find(|r| r.prefetcher == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,suggestions_issued,prefetch_fills,correct_rate,error_rate,deny_rate,\
l1_hit_rate,prefetch_level_hit_rate,amat_cycles\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.suggestions_issued,
                r.prefetch_fills,
                csv_opt(r.correct_rate),
                csv_opt(r.error_rate),
                csv_opt(r.deny_rate),
                csv_opt(r.l1_hit_rate),
                csv_opt(r.prefetch_level_hit_rate),
                csv_opt(r.amat_cycles)
            )
            .unwrap();
        }
        out.push_str(
            "\ncomparison,correct_rate_increase,error_rate_decrease,deny_rate,suggestion_decrease,\
prefetch_fill_decrease,hit_rate_delta\n",
        );
        for d in &self.deltas {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                d.comparison,
                csv_opt(d.correct_rate_increase),
                csv_opt(d.error_rate_decrease),
                csv_opt(d.deny_rate),
                csv_opt(d.suggestion_decrease),
                csv_opt(d.prefetch_fill_decrease),
                csv_opt(d.hit_rate_delta)
            )
            .unwrap();
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "| variant | suggestions | fills | correct rate | error rate | deny rate | L1 hit rate | PF-level hit rate | AMAT |\n",
        );
        out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.variant,
                r.suggestions_issued,
                r.prefetch_fills,
                pct(r.correct_rate),
                pct(r.error_rate),
                pct(r.deny_rate),
                pct(r.l1_hit_rate),
                pct(r.prefetch_level_hit_rate),
                r.amat_cycles.map_or("-".into(), |a| format!("{a:.2}"))
            )
            .unwrap();
        }
        if !self.deltas.is_empty() {
            out.push_str("\n| comparison | correct rate + | error rate - | deny rate | suggestion decrease | fill decrease | hit rate delta |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
            for d in &self.deltas {
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    d.comparison,
                    pct(d.correct_rate_increase),
                    pct(d.error_rate_decrease),
                    pct(d.deny_rate),
                    pct(d.suggestion_decrease),
                    pct(d.prefetch_fill_decrease),
                    pct(d.hit_rate_delta)
                )
                .unwrap();
            }
        }
        out
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}%", v * 100.0))
}
