//! The prefetching datapath, run once per trace record.
//!
//! For each access: the demand lookup goes through the hierarchy. Each lookup
//! at the prefetching level ages the accept table. Each miss there ages the
//! deny table, is pushed into the GHB, and triggers the first-level
//! prefetcher. Each suggestion is voted on by the perceptron (baselines
//! accept everything). Accepted blocks that are not yet resident are filled
//! instantly. Table resolutions train the perceptron.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, CacheGeometry, Hierarchy, LatencyTotals};
use crate::ghb::{Ghb, GhbKeying, DEFAULT_CAPACITY};
use crate::perceptron::{
    extract_features, DecisionTables, FeatureVector, Perceptron, PerceptronConfig, PerceptronConfigError,
    Quantizer, Resolution, ResolutionKind, TableConfig, TableEvent, Verdict, NUM_FEATURES,
};
use crate::prefetch::{markov_suggest, stride_suggest, MarkovConfig, Miss, PrefetchSuggestion, StrideConfig};
use crate::trace::{BlockAddr, MemoryAccess, TraceError};

/// Bumped whenever a `RunReport` JSON field changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefetcherKind {
    None,
    Stride,
    StridePerceptron,
    Markov,
    MarkovPerceptron,
}

impl PrefetcherKind {
    pub const COMPARED: [PrefetcherKind; 4] = [
        PrefetcherKind::Stride,
        PrefetcherKind::StridePerceptron,
        PrefetcherKind::Markov,
        PrefetcherKind::MarkovPerceptron,
    ];

    pub fn uses_perceptron(self) -> bool {
        matches!(self, PrefetcherKind::StridePerceptron | PrefetcherKind::MarkovPerceptron)
    }

    fn keying(self) -> Option<GhbKeying> {
        match self {
            PrefetcherKind::None => None,
            PrefetcherKind::Stride | PrefetcherKind::StridePerceptron => Some(GhbKeying::Pc),
            PrefetcherKind::Markov | PrefetcherKind::MarkovPerceptron => Some(GhbKeying::Block),
        }
    }

    /// Short label: S, SP, M, MP.
    pub fn label(self) -> &'static str {
        match self {
            PrefetcherKind::None => "none",
            PrefetcherKind::Stride => "S",
            PrefetcherKind::StridePerceptron => "SP",
            PrefetcherKind::Markov => "M",
            PrefetcherKind::MarkovPerceptron => "MP",
        }
    }

    /// The unfiltered variant a perceptron variant is compared against.
    pub fn baseline(self) -> PrefetcherKind {
        match self {
            PrefetcherKind::StridePerceptron => PrefetcherKind::Stride,
            PrefetcherKind::MarkovPerceptron => PrefetcherKind::Markov,
            other => other,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Perceptron(#[from] PerceptronConfigError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("trace error: {0}")]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub prefetcher: PrefetcherKind,
    pub ghb_capacity: usize,
    pub stride: StrideConfig,
    pub markov: MarkovConfig,
    pub perceptron: PerceptronConfig,
    pub quantizer: Quantizer,
    pub accept_table_entries: usize,
    pub deny_table_entries: usize,
    pub accept_window: u16,
    pub deny_window: u16,
    pub levels: Vec<CacheGeometry>,
    /// Index into `levels` of the cache the prefetcher serves.
    pub prefetch_level: usize,
    pub memory_latency_cycles: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let tables = TableConfig::default();
        Self {
            prefetcher: PrefetcherKind::StridePerceptron,
            ghb_capacity: DEFAULT_CAPACITY,
            stride: StrideConfig::default(),
            markov: MarkovConfig::default(),
            perceptron: PerceptronConfig::default(),
            quantizer: Quantizer::default(),
            accept_table_entries: tables.accept_capacity,
            deny_table_entries: tables.deny_capacity,
            accept_window: tables.accept_window,
            deny_window: tables.deny_window,
            levels: vec![CacheGeometry::l1d(), CacheGeometry::l2()],
            prefetch_level: 1,
            memory_latency_cycles: 200,
        }
    }
}

impl EngineConfig {
    pub fn with_prefetcher(mut self, prefetcher: PrefetcherKind) -> Self {
        self.prefetcher = prefetcher;
        self
    }

    pub fn tables(&self) -> TableConfig {
        TableConfig {
            accept_capacity: self.accept_table_entries,
            deny_capacity: self.deny_table_entries,
            accept_window: self.accept_window,
            deny_window: self.deny_window,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.levels.is_empty() {
            return Err(CacheError::EmptyHierarchy.into());
        }
        for g in &self.levels {
            g.validate()?;
        }
        if self.prefetch_level >= self.levels.len() {
            return invalid("prefetch_level must name a configured cache level");
        }
        if self.ghb_capacity == 0 || self.ghb_capacity < self.stride.confirm_len {
            return invalid("ghb_capacity must be positive and at least stride.confirm_len");
        }
        if self.stride.confirm_len < 2 {
            return invalid("stride.confirm_len must be at least 2");
        }
        if self.stride.degree == 0 || self.markov.degree == 0 {
            return invalid("prefetch degrees must be positive");
        }
        if !(1..=256).contains(&self.accept_window) || !(1..=256).contains(&self.deny_window) {
            return invalid("accept_window and deny_window must be in 1..=256 (8-bit durations)");
        }
        if self.accept_table_entries == 0 || self.deny_table_entries == 0 {
            return invalid("decision tables need at least one entry");
        }
        self.perceptron.validate()?;
        self.quantizer.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounts {
    pub recorded_accept: u64,
    pub recorded_deny: u64,
    pub correct_accept: u64,
    pub wrong_accept_timeout: u64,
    pub wrong_accept_evicted: u64,
    pub wrong_accept_flush: u64,
    pub correct_deny_timeout: u64,
    pub correct_deny_evicted: u64,
    pub correct_deny_flush: u64,
    pub wrong_deny: u64,
}

impl DecisionCounts {
    fn count(&mut self, kind: ResolutionKind) {
        let slot = match kind {
            ResolutionKind::CorrectAccept => &mut self.correct_accept,
            ResolutionKind::WrongAcceptTimeout => &mut self.wrong_accept_timeout,
            ResolutionKind::WrongAcceptEvicted => &mut self.wrong_accept_evicted,
            ResolutionKind::WrongAcceptFlush => &mut self.wrong_accept_flush,
            ResolutionKind::CorrectDenyTimeout => &mut self.correct_deny_timeout,
            ResolutionKind::CorrectDenyEvicted => &mut self.correct_deny_evicted,
            ResolutionKind::CorrectDenyFlush => &mut self.correct_deny_flush,
            ResolutionKind::WrongDeny => &mut self.wrong_deny,
        };
        *slot += 1;
    }

    pub fn recorded(&self) -> u64 {
        self.recorded_accept + self.recorded_deny
    }

    pub fn resolved(&self) -> u64 {
        self.correct_accept
            + self.wrong_accept_timeout
            + self.wrong_accept_evicted
            + self.wrong_accept_flush
            + self.correct_deny_timeout
            + self.correct_deny_evicted
            + self.correct_deny_flush
            + self.wrong_deny
    }
}

/// Running tallies; a snapshot can be taken at any step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub accesses: u64,
    pub triggers: u64,
    pub suggestions_issued: u64,
    pub suggestions_accepted: u64,
    pub suggestions_denied: u64,
    /// Accepted suggestions that were already resident or already filled
    /// by the same trigger.
    pub redundant_accepts: u64,
    pub prefetch_fills: u64,
    pub prefetch_correct: u64,
    pub prefetch_wrong: u64,
    pub training_updates: u64,
    pub decisions: DecisionCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelReport {
    pub name: String,
    pub demand_accesses: u64,
    pub demand_hits: u64,
    pub demand_misses: u64,
    pub prefetch_fills: u64,
    pub writebacks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub prefetcher: PrefetcherKind,
    pub prefetch_level: usize,
    pub accesses: u64,
    pub levels: Vec<LevelReport>,
    pub triggers: u64,
    pub suggestions_issued: u64,
    pub suggestions_accepted: u64,
    pub suggestions_denied: u64,
    pub redundant_accepts: u64,
    pub prefetch_fills: u64,
    pub prefetch_correct: u64,
    pub prefetch_wrong: u64,
    pub decisions: DecisionCounts,
    pub training_updates: u64,
    pub latency: LatencyTotals,
    /// Absent when no demand access was made.
    pub amat_cycles: Option<f64>,
    pub final_weights: Option<[i8; NUM_FEATURES]>,
    pub ghb_live_keys: Option<usize>,
    /// Excluded from serialized forms so reports stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunReport {
    pub const CSV_HEADER: &'static str = "prefetcher,accesses,triggers,suggestions_issued,\
suggestions_accepted,suggestions_denied,prefetch_fills,prefetch_correct,prefetch_wrong,\
l1_hits,l1_misses,pf_level_hits,pf_level_misses,amat_cycles,w1,w2,w3,w4,w5";

    pub fn level(&self, i: usize) -> &LevelReport {
        &self.levels[i]
    }

    pub fn prefetch_level_report(&self) -> &LevelReport {
        &self.levels[self.prefetch_level]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_row(&self) -> String {
        let l1 = &self.levels[0];
        let pf = self.prefetch_level_report();
        let amat = self.amat_cycles.map_or_else(String::new, |a| format!("{a:.6}"));
        let weights = match self.final_weights {
            Some(w) => w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            None => ",,,,".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.prefetcher.label(),
            self.accesses,
            self.triggers,
            self.suggestions_issued,
            self.suggestions_accepted,
            self.suggestions_denied,
            self.prefetch_fills,
            self.prefetch_correct,
            self.prefetch_wrong,
            l1.demand_hits,
            l1.demand_misses,
            pf.demand_hits,
            pf.demand_misses,
            amat,
            weights
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineEvent {
    Suggested { block: BlockAddr, verdict: Verdict },
    Filled { block: BlockAddr },
    Used { block: BlockAddr },
    EvictedUnused { block: BlockAddr },
    FlushedUnused { block: BlockAddr },
}

/// One row of the perceptron training log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingRecord {
    pub tick: u64,
    pub kind: ResolutionKind,
    pub block: BlockAddr,
    pub features: FeatureVector,
    pub desired: Verdict,
    pub decision: Verdict,
    pub weights: [i8; NUM_FEATURES],
}

impl TrainingRecord {
    pub const CSV_HEADER: &'static str = "tick,event,block,x1,x2,x3,x4,x5,d,r,w1,w2,w3,w4,w5";

    pub fn csv_row(&self) -> String {
        let x = self.features.0;
        let w = self.weights;
        format!(
            "{},{},{:x},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.tick,
            self.kind.as_str(),
            self.block.0,
            x[0],
            x[1],
            x[2],
            x[3],
            x[4],
            self.desired.sign(),
            self.decision.sign(),
            w[0],
            w[1],
            w[2],
            w[3],
            w[4]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuggestionOutcome {
    pub suggestion: PrefetchSuggestion,
    pub features: FeatureVector,
    /// Perceptron output; absent for baselines.
    pub y_out: Option<i32>,
    pub verdict: Verdict,
    pub filled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerOutcome {
    pub miss: Miss,
    pub suggestions: Vec<SuggestionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub served_by: usize,
    pub latency_cycles: u64,
    pub trigger: Option<TriggerOutcome>,
}

/// Optional logs, off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineOptions {
    pub record_events: bool,
    pub record_latencies: bool,
    pub record_training: bool,
}

pub struct Engine {
    cfg: EngineConfig,
    hierarchy: Hierarchy,
    ghb: Option<Ghb>,
    perceptron: Option<Perceptron>,
    tables: DecisionTables,
    counters: Counters,
    events: Option<Vec<EngineEvent>>,
    latencies: Option<Vec<u64>>,
    training: Option<Vec<TrainingRecord>>,
    flushed: bool,
    started: Instant,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, ConfigError> {
        Self::with_options(cfg, EngineOptions::default())
    }

    pub fn with_options(cfg: EngineConfig, opts: EngineOptions) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let hierarchy = Hierarchy::new(&cfg.levels, cfg.memory_latency_cycles)?;
        let ghb = cfg.prefetcher.keying().map(|k| Ghb::new(cfg.ghb_capacity, k));
        let perceptron = cfg.prefetcher.uses_perceptron().then(|| Perceptron::new(&cfg.perceptron));
        Ok(Self {
            tables: DecisionTables::new(cfg.tables()),
            hierarchy,
            ghb,
            perceptron,
            counters: Counters::default(),
            events: opts.record_events.then(Vec::new),
            latencies: opts.record_latencies.then(Vec::new),
            training: opts.record_training.then(Vec::new),
            flushed: false,
            started: Instant::now(),
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn ghb(&self) -> Option<&Ghb> {
        self.ghb.as_ref()
    }

    pub fn tables(&self) -> &DecisionTables {
        &self.tables
    }

    pub fn weights(&self) -> Option<[i8; NUM_FEATURES]> {
        self.perceptron.map(|p| p.weights)
    }

    pub fn events(&self) -> Option<&[EngineEvent]> {
        self.events.as_deref()
    }

    pub fn latencies(&self) -> Option<&[u64]> {
        self.latencies.as_deref()
    }

    pub fn training_log(&self) -> Option<&[TrainingRecord]> {
        self.training.as_deref()
    }

    /// Prefetched lines filled but not yet resolved as used or wasted.
    pub fn in_flight(&self) -> u64 {
        let c = &self.counters;
        c.prefetch_fills - c.prefetch_correct - c.prefetch_wrong
    }

    fn log(&mut self, event: EngineEvent) {
        if let Some(events) = self.events.as_mut() {
            events.push(event);
        }
    }

    fn resolve(&mut self, resolutions: impl IntoIterator<Item = Resolution>) {
        for r in resolutions {
            self.counters.decisions.count(r.kind);
            let Some(p) = self.perceptron.as_mut() else { continue };
            if r.needs_training() {
                p.train(&r.features, r.kind.decision(), r.kind.desired());
                self.counters.training_updates += 1;
            }
            if let Some(log) = self.training.as_mut() {
                log.push(TrainingRecord {
                    tick: self.counters.accesses,
                    kind: r.kind,
                    block: r.block,
                    features: r.features,
                    desired: r.kind.desired(),
                    decision: r.kind.decision(),
                    weights: p.weights,
                });
            }
        }
    }

    pub fn step(&mut self, access: &MemoryAccess) -> StepOutcome {
        assert!(!self.flushed, "step after flush");
        self.counters.accesses += 1;
        let level = self.cfg.prefetch_level;
        let block = access.block(self.hierarchy.line_bytes());
        let demand = self.hierarchy.demand(block, access.kind);
        if let Some(lat) = self.latencies.as_mut() {
            lat.push(demand.latency_cycles);
        }
        let mut trigger = None;
        if let Some(outcome) = demand.outcomes.get(level).copied() {
            if outcome.prefetch_first_use {
                self.counters.prefetch_correct += 1;
                self.log(EngineEvent::Used { block });
            }
            if let Some(ev) = outcome.evicted.filter(|e| e.unused_prefetch()) {
                self.counters.prefetch_wrong += 1;
                self.log(EngineEvent::EvictedUnused { block: ev.block });
            }
            let resolved = self.tables.tick(TableEvent::DemandAccess(block));
            self.resolve(resolved);
            if !outcome.hit {
                let resolved = self.tables.tick(TableEvent::CacheMiss(block));
                self.resolve(resolved);
                self.counters.triggers += 1;
                let miss = Miss { block, pc: access.pc };
                trigger = self.on_miss(miss);
            }
        }
        StepOutcome { served_by: demand.served_by, latency_cycles: demand.latency_cycles, trigger }
    }

    fn on_miss(&mut self, miss: Miss) -> Option<TriggerOutcome> {
        let ghb = self.ghb.as_mut()?;
        ghb.push(miss.block, miss.pc);
        let ghb = self.ghb.as_ref().unwrap();
        let suggestions = match self.cfg.prefetcher {
            PrefetcherKind::Stride | PrefetcherKind::StridePerceptron => {
                stride_suggest(ghb, miss, &self.cfg.stride)
            }
            PrefetcherKind::Markov | PrefetcherKind::MarkovPerceptron => {
                markov_suggest(ghb, miss, &self.cfg.markov)
            }
            PrefetcherKind::None => unreachable!("no GHB without a prefetcher"),
        };
        let window = self.cfg.perceptron.transition_window;
        let featured: Vec<_> = suggestions
            .into_iter()
            .map(|s| (s, extract_features(ghb, &s, miss, window, &self.cfg.quantizer)))
            .collect();

        let level = self.cfg.prefetch_level;
        let mut filled_now: Vec<BlockAddr> = Vec::new();
        let mut outcomes = Vec::with_capacity(featured.len());
        for (suggestion, features) in featured {
            self.counters.suggestions_issued += 1;
            let (verdict, y_out) = match &self.perceptron {
                Some(p) => {
                    let d = p.decide(&features);
                    (d.verdict, Some(d.y_out))
                }
                None => (Verdict::Accept, None),
            };
            self.log(EngineEvent::Suggested { block: suggestion.block, verdict });
            let evicted = self.tables.record_decision(suggestion.block, features, verdict);
            self.resolve(evicted);
            let mut filled = false;
            match verdict {
                Verdict::Accept => {
                    self.counters.suggestions_accepted += 1;
                    self.counters.decisions.recorded_accept += 1;
                    let resident = self.hierarchy.level(level).contains(suggestion.block);
                    if resident || filled_now.contains(&suggestion.block) {
                        self.counters.redundant_accepts += 1;
                    } else if let Some(out) = self.hierarchy.prefetch(level, suggestion.block) {
                        filled = true;
                        filled_now.push(suggestion.block);
                        self.counters.prefetch_fills += 1;
                        self.log(EngineEvent::Filled { block: suggestion.block });
                        if let Some(ev) = out.evicted.filter(|e| e.unused_prefetch()) {
                            self.counters.prefetch_wrong += 1;
                            self.log(EngineEvent::EvictedUnused { block: ev.block });
                        }
                    }
                }
                Verdict::Deny => {
                    self.counters.suggestions_denied += 1;
                    self.counters.decisions.recorded_deny += 1;
                }
            }
            outcomes.push(SuggestionOutcome { suggestion, features, y_out, verdict, filled });
        }
        Some(TriggerOutcome { miss, suggestions: outcomes })
    }

    /// End-of-trace resolution: outstanding accepts count wrong (and train),
    /// outstanding denies count correct, and resident unused prefetched lines
    /// count as wrong prefetches. Idempotent.
    pub fn flush(&mut self) {
        if self.flushed {
            return;
        }
        self.flushed = true;
        let resolved = self.tables.flush();
        self.resolve(resolved);
        let level = self.cfg.prefetch_level;
        let unused: Vec<BlockAddr> = self.hierarchy.level(level).unused_prefetched_lines().collect();
        self.counters.prefetch_wrong += unused.len() as u64;
        for block in unused {
            self.log(EngineEvent::FlushedUnused { block });
        }
    }

    pub fn report(&self) -> RunReport {
        let c = &self.counters;
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            prefetcher: self.cfg.prefetcher,
            prefetch_level: self.cfg.prefetch_level,
            accesses: c.accesses,
            levels: self
                .hierarchy
                .levels()
                .iter()
                .map(|l| {
                    let s = l.stats();
                    LevelReport {
                        name: l.geometry().name.clone(),
                        demand_accesses: s.demand_accesses,
                        demand_hits: s.demand_hits,
                        demand_misses: s.demand_misses,
                        prefetch_fills: s.prefetch_fills,
                        writebacks: s.writebacks,
                    }
                })
                .collect(),
            triggers: c.triggers,
            suggestions_issued: c.suggestions_issued,
            suggestions_accepted: c.suggestions_accepted,
            suggestions_denied: c.suggestions_denied,
            redundant_accepts: c.redundant_accepts,
            prefetch_fills: c.prefetch_fills,
            prefetch_correct: c.prefetch_correct,
            prefetch_wrong: c.prefetch_wrong,
            decisions: c.decisions,
            training_updates: c.training_updates,
            latency: *self.hierarchy.latency(),
            amat_cycles: crate::cache::amat(self.hierarchy.latency()).ok(),
            final_weights: self.weights(),
            ghb_live_keys: self.ghb.as_ref().map(Ghb::live_keys),
            wall_time: self.started.elapsed(),
        }
    }

    /// Flushes and reports.
    pub fn finish(mut self) -> RunReport {
        self.flush();
        self.report()
    }
}

/// Folds a fallible trace through a fresh engine.
pub fn run<I>(cfg: &EngineConfig, trace: I) -> Result<RunReport, EngineError>
where
    I: IntoIterator<Item = Result<MemoryAccess, TraceError>>,
{
    let mut engine = Engine::new(cfg.clone())?;
    for access in trace {
        engine.step(&access?);
    }
    Ok(engine.finish())
}

pub fn run_accesses(cfg: &EngineConfig, trace: &[MemoryAccess]) -> Result<RunReport, ConfigError> {
    let mut engine = Engine::new(cfg.clone())?;
    for access in trace {
        engine.step(access);
    }
    Ok(engine.finish())
}
