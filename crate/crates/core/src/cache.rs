//! Set-associative LRU caches composed into a non-inclusive hierarchy.
//!
//! Every level is write-allocate/write-back. Dirty evictions are counted but
//! do not touch the next level and add no latency. Prefetch fills are
//! inserted as most-recently-used and tagged so their first demand use can
//! be observed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{AccessKind, BlockAddr};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("invalid geometry for {name}: {reason}")]
    InvalidGeometry { name: String, reason: String },
    #[error("hierarchy needs at least one level")]
    EmptyHierarchy,
    #[error("all levels must share one line size")]
    MixedLineSizes,
    #[error("no demand accesses recorded")]
    NoAccesses,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheGeometry {
    pub name: String,
    pub size_bytes: u64,
    pub line_bytes: u64,
    pub associativity: u64,
    pub hit_latency_cycles: u64,
    /// Recorded for completeness; port contention is not modeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_ports: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write_ports: Option<u32>,
}

impl CacheGeometry {
    pub fn new(name: &str, size_bytes: u64, associativity: u64, hit_latency_cycles: u64) -> Self {
        Self {
            name: name.to_string(),
            size_bytes,
            line_bytes: 64,
            associativity,
            hit_latency_cycles,
            read_ports: None,
            write_ports: None,
        }
    }

    pub fn l1d() -> Self {
        Self::new("L1D", 32 * 1024, 8, 4)
    }

    pub fn l2() -> Self {
        Self::new("L2", 256 * 1024, 8, 6)
    }

    pub fn l3() -> Self {
        Self::new("L3", 12 * 1024 * 1024, 16, 27)
    }

    pub fn sets(&self) -> u64 {
        self.size_bytes / (self.line_bytes * self.associativity)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let fail = |reason: &str| {
            Err(CacheError::InvalidGeometry { name: self.name.clone(), reason: reason.to_string() })
        };
        if !self.line_bytes.is_power_of_two() || !(16..=256).contains(&self.line_bytes) {
            return fail("line_bytes must be a power of two in 16..=256");
        }
        if self.associativity == 0 {
            return fail("associativity must be > 0");
        }
        match self.line_bytes.checked_mul(self.associativity) {
            Some(way_span) if self.size_bytes > 0 && self.size_bytes.is_multiple_of(way_span) => {}
            _ => return fail("associativity * line_bytes must divide size_bytes"),
        }
        if self.hit_latency_cycles == 0 {
            return fail("hit latency must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheLineState {
    pub tag: u64,
    pub valid: bool,
    pub dirty: bool,
    /// Line was brought in by a prefetch fill.
    pub prefetched: bool,
    /// A demand access has touched the line since it was filled.
    pub used_since_fill: bool,
    pub lru_stamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub block: BlockAddr,
    pub was_prefetched: bool,
    pub was_used: bool,
    pub dirty: bool,
}

impl Eviction {
    pub fn unused_prefetch(&self) -> bool {
        self.was_prefetched && !self.was_used
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit: bool,
    /// Demand hit on a prefetched line that had not been used yet.
    pub prefetch_first_use: bool,
    pub evicted: Option<Eviction>,
    pub latency_cycles: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub demand_accesses: u64,
    pub demand_hits: u64,
    pub demand_misses: u64,
    pub prefetch_fills: u64,
    pub prefetch_used: u64,
    pub prefetch_evicted_unused: u64,
    pub writebacks: u64,
}

pub struct CacheLevel {
    geometry: CacheGeometry,
    lines: Vec<CacheLineState>,
    num_sets: u64,
    ways: usize,
    clock: u64,
    stats: LevelStats,
}

impl CacheLevel {
    pub fn new(geometry: CacheGeometry) -> Result<Self, CacheError> {
        geometry.validate()?;
        let num_sets = geometry.sets();
        let ways = geometry.associativity as usize;
        Ok(Self {
            lines: vec![CacheLineState::default(); num_sets as usize * ways],
            num_sets,
            ways,
            geometry,
            clock: 0,
            stats: LevelStats::default(),
        })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn stats(&self) -> &LevelStats {
        &self.stats
    }

    fn set_range(&self, block: BlockAddr) -> (std::ops::Range<usize>, u64) {
        let set = (block.0 % self.num_sets) as usize;
        let start = set * self.ways;
        (start..start + self.ways, block.0 / self.num_sets)
    }

    fn find(&self, block: BlockAddr) -> Option<usize> {
        let (range, tag) = self.set_range(block);
        range.into_iter().find(|&i| self.lines[i].valid && self.lines[i].tag == tag)
    }

    pub fn contains(&self, block: BlockAddr) -> bool {
        self.find(block).is_some()
    }

    pub fn line(&self, block: BlockAddr) -> Option<&CacheLineState> {
        self.find(block).map(|i| &self.lines[i])
    }

    /// Valid lines of the set `block` maps to.
    pub fn set_lines(&self, block: BlockAddr) -> impl Iterator<Item = &CacheLineState> {
        let (range, _) = self.set_range(block);
        self.lines[range].iter().filter(|l| l.valid)
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Installs `block` in the LRU (or first invalid) way of its set.
    fn install(&mut self, block: BlockAddr, line: CacheLineState) -> Option<Eviction> {
        let (range, tag) = self.set_range(block);
        let victim = range
            .clone()
            .find(|&i| !self.lines[i].valid)
            .unwrap_or_else(|| range.min_by_key(|&i| self.lines[i].lru_stamp).unwrap());
        let old = self.lines[victim];
        self.lines[victim] = CacheLineState { tag, valid: true, ..line };
        if !old.valid {
            return None;
        }
        let ev = Eviction {
            block: BlockAddr(old.tag * self.num_sets + (block.0 % self.num_sets)),
            was_prefetched: old.prefetched,
            was_used: old.used_since_fill,
            dirty: old.dirty,
        };
        if ev.unused_prefetch() {
            self.stats.prefetch_evicted_unused += 1;
        }
        if ev.dirty {
            self.stats.writebacks += 1;
        }
        Some(ev)
    }

    /// Looks `block` up; a demand miss allocates, a prefetch miss fills the
    /// line tagged as prefetched. A prefetch to a resident line is a no-op.
    pub fn access(&mut self, block: BlockAddr, kind: AccessKind, demand: bool) -> AccessOutcome {
        let latency_cycles = self.geometry.hit_latency_cycles;
        let write = kind == AccessKind::Write;
        if let Some(i) = self.find(block) {
            let mut prefetch_first_use = false;
            if demand {
                let stamp = self.tick();
                let line = &mut self.lines[i];
                prefetch_first_use = line.prefetched && !line.used_since_fill;
                line.used_since_fill = true;
                line.lru_stamp = stamp;
                line.dirty |= write;
                self.stats.demand_accesses += 1;
                self.stats.demand_hits += 1;
                if prefetch_first_use {
                    self.stats.prefetch_used += 1;
                }
            }
            return AccessOutcome { hit: true, prefetch_first_use, evicted: None, latency_cycles };
        }
        let stamp = self.tick();
        let line = CacheLineState {
            tag: 0,
            valid: true,
            dirty: demand && write,
            prefetched: !demand,
            used_since_fill: demand,
            lru_stamp: stamp,
        };
        if demand {
            self.stats.demand_accesses += 1;
            self.stats.demand_misses += 1;
        } else {
            self.stats.prefetch_fills += 1;
        }
        let evicted = self.install(block, line);
        AccessOutcome { hit: false, prefetch_first_use: false, evicted, latency_cycles }
    }

    /// Resident prefetched lines that were never used.
    pub fn unused_prefetched_lines(&self) -> impl Iterator<Item = BlockAddr> + '_ {
        let num_sets = self.num_sets;
        let ways = self.ways;
        self.lines.iter().enumerate().filter(|(_, l)| l.valid && l.prefetched && !l.used_since_fill).map(
            move |(i, l)| BlockAddr(l.tag * num_sets + (i / ways) as u64),
        )
    }
}

/// Accumulated demand latency; the mean is the AMAT proxy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyTotals {
    pub total_cycles: u64,
    pub accesses: u64,
}

impl LatencyTotals {
    pub fn record(&mut self, cycles: u64) {
        self.total_cycles += cycles;
        self.accesses += 1;
    }
}

pub fn amat(stats: &LatencyTotals) -> Result<f64, CacheError> {
    if stats.accesses == 0 {
        return Err(CacheError::NoAccesses);
    }
    Ok(stats.total_cycles as f64 / stats.accesses as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandOutcome {
    /// Index of the level that hit, or `levels.len()` when memory served it.
    pub served_by: usize,
    pub latency_cycles: u64,
    /// One outcome per level that was looked up (levels `0..=served_by`).
    pub outcomes: Vec<AccessOutcome>,
}

impl DemandOutcome {
    pub fn accessed(&self, level: usize) -> bool {
        level < self.outcomes.len()
    }

    pub fn hit_at(&self, level: usize) -> bool {
        self.served_by == level
    }
}

pub struct Hierarchy {
    levels: Vec<CacheLevel>,
    memory_latency_cycles: u64,
    line_bytes: u64,
    latency: LatencyTotals,
}

impl Hierarchy {
    pub fn new(geometries: &[CacheGeometry], memory_latency_cycles: u64) -> Result<Self, CacheError> {
        let first = geometries.first().ok_or(CacheError::EmptyHierarchy)?;
        if geometries.iter().any(|g| g.line_bytes != first.line_bytes) {
            return Err(CacheError::MixedLineSizes);
        }
        let line_bytes = first.line_bytes;
        let levels = geometries.iter().cloned().map(CacheLevel::new).collect::<Result<_, _>>()?;
        Ok(Self { levels, memory_latency_cycles, line_bytes, latency: LatencyTotals::default() })
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    pub fn levels(&self) -> &[CacheLevel] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &CacheLevel {
        &self.levels[i]
    }

    pub fn latency(&self) -> &LatencyTotals {
        &self.latency
    }

    /// Demand access: looks up levels top-down until one hits, then fills
    /// every missed level. Latency stacks the hit latencies of all levels
    /// looked up, plus memory latency on a full miss.
    pub fn demand(&mut self, block: BlockAddr, kind: AccessKind) -> DemandOutcome {
        let mut outcomes = Vec::with_capacity(self.levels.len());
        let mut latency = 0;
        let mut served_by = self.levels.len();
        for (i, level) in self.levels.iter_mut().enumerate() {
            // Only the first level sees the store; lower levels supply the line.
            let level_kind = if i == 0 { kind } else { AccessKind::Read };
            let outcome = level.access(block, level_kind, true);
            latency += outcome.latency_cycles;
            let hit = outcome.hit;
            outcomes.push(outcome);
            if hit {
                served_by = i;
                break;
            }
        }
        if served_by == self.levels.len() {
            latency += self.memory_latency_cycles;
        }
        self.latency.record(latency);
        DemandOutcome { served_by, latency_cycles: latency, outcomes }
    }

    /// Prefetch fill into `level`. Returns `None` if the block was resident.
    pub fn prefetch(&mut self, level: usize, block: BlockAddr) -> Option<AccessOutcome> {
        let outcome = self.levels[level].access(block, AccessKind::Read, false);
        (!outcome.hit).then_some(outcome)
    }
}
