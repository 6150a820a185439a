//! Second-level filter: GHB feature extraction, quantization, a single
//! integer perceptron, and the accept/deny decision tables that supply its
//! delayed training labels.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ghb::Ghb;
use crate::prefetch::{Miss, PrefetchSuggestion};
use crate::trace::BlockAddr;

pub const NUM_FEATURES: usize = 5;
pub const FEATURE_MIN: i8 = -8;
pub const FEATURE_MAX: i8 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PerceptronConfigError {
    #[error("{0}: need exactly one more level than thresholds")]
    BucketShape(&'static str),
    #[error("{0}: thresholds must be strictly increasing")]
    BucketOrder(&'static str),
    #[error("{0}: levels must lie in [-8, 8] and be monotone")]
    BucketLevels(&'static str),
    #[error("transition window must be in 1..=32")]
    Window,
    #[error("learning rate must be positive")]
    Alpha,
}

/// Quantized perceptron inputs. `x[4]` is the constant bias input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector(pub [i8; NUM_FEATURES]);

impl FeatureVector {
    pub fn new(distance: i8, transition: i8, pc_xor_block: i8, occurrences: i8) -> Self {
        Self([distance, transition, pc_xor_block, occurrences, 1])
    }

    pub fn prefetch_distance(&self) -> i8 {
        self.0[0]
    }
    pub fn transition_prob(&self) -> i8 {
        self.0[1]
    }
    pub fn pc_xor_block(&self) -> i8 {
        self.0[2]
    }
    pub fn occurrence_freq(&self) -> i8 {
        self.0[3]
    }
    pub fn bias(&self) -> i8 {
        self.0[4]
    }

    /// 4-bit two's-complement packing; the +8 level saturates to +7.
    pub fn packed(&self) -> u32 {
        self.0[..4]
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &v)| acc | (((v.min(7) as u8) & 0xf) as u32) << (4 * i))
    }
}

/// Unquantized features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawFeatures {
    /// Minimum distance from the head of an entry holding the suggested
    /// block; the GHB capacity if there is none.
    pub distance: usize,
    /// Transition weight as an exact fraction `num / den` in `[0, 1)`.
    pub transition_num: u64,
    pub transition_den: u64,
    /// Low 16 bits of `block ^ (pc >> 2)`.
    pub pc_xor_block: u16,
    /// Live entries holding the suggested block.
    pub occurrences: usize,
}

impl RawFeatures {
    pub fn transition(&self) -> f64 {
        self.transition_num as f64 / self.transition_den as f64
    }
}

/// Threshold step function: `levels[#thresholds <= v]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Buckets {
    pub thresholds: Vec<u64>,
    pub levels: Vec<i8>,
}

impl Buckets {
    pub fn level(&self, value: u64) -> i8 {
        let idx = self.thresholds.partition_point(|&t| t <= value);
        self.levels[idx]
    }

    fn validate(&self, name: &'static str, increasing: bool) -> Result<(), PerceptronConfigError> {
        if self.levels.len() != self.thresholds.len() + 1 {
            return Err(PerceptronConfigError::BucketShape(name));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PerceptronConfigError::BucketOrder(name));
        }
        let in_range = self.levels.iter().all(|l| (FEATURE_MIN..=FEATURE_MAX).contains(l));
        let monotone =
            self.levels.windows(2).all(|w| if increasing { w[0] <= w[1] } else { w[0] >= w[1] });
        if !in_range || !monotone {
            return Err(PerceptronConfigError::BucketLevels(name));
        }
        Ok(())
    }
}

/// Every quantization boundary in one place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Quantizer {
    /// GHB distance, log-spaced from the head (+8) to far/absent (-8).
    /// Distances at or beyond the GHB capacity always take the last level.
    pub distance: Buckets,
    /// Occurrence count, log-spaced from 0 (-8) to >= 32 (+8).
    pub occurrences: Buckets,
    /// Multiplier of the 32-bit multiplicative hash; the top 4 bits of
    /// `v * multiplier` minus 8 give the bucket in [-8, 7].
    pub xor_hash_multiplier: u32,
}

impl Default for Quantizer {
    fn default() -> Self {
        Self {
            distance: Buckets {
                thresholds: vec![1, 2, 4, 8, 16, 32, 64, 128],
                levels: vec![8, 6, 4, 2, 0, -2, -4, -6, -8],
            },
            occurrences: Buckets {
                thresholds: vec![1, 2, 4, 8, 16, 32],
                levels: vec![-8, -5, -3, 0, 3, 5, 8],
            },
            xor_hash_multiplier: 0x9E37_79B1,
        }
    }
}

impl Quantizer {
    pub fn validate(&self) -> Result<(), PerceptronConfigError> {
        self.distance.validate("distance", false)?;
        self.occurrences.validate("occurrences", true)
    }

    pub fn distance(&self, distance: usize, capacity: usize) -> i8 {
        if distance >= capacity {
            *self.distance.levels.last().unwrap()
        } else {
            self.distance.level(distance as u64)
        }
    }

    /// Linear map of `[0, 1]` onto `[-8, 8]`, rounding half up.
    pub fn transition(&self, num: u64, den: u64) -> i8 {
        let num = num.min(den) as u128;
        let den = den as u128;
        let steps = (32 * num + den) / (2 * den);
        (steps as i64 - 8) as i8
    }

    pub fn pc_xor_block(&self, value: u16) -> i8 {
        ((value as u32).wrapping_mul(self.xor_hash_multiplier) >> 28) as i8 - 8
    }

    pub fn occurrences(&self, count: usize) -> i8 {
        self.occurrences.level(count as u64)
    }

    pub fn quantize(&self, raw: &RawFeatures, capacity: usize) -> FeatureVector {
        FeatureVector::new(
            self.distance(raw.distance, capacity),
            self.transition(raw.transition_num, raw.transition_den),
            self.pc_xor_block(raw.pc_xor_block),
            self.occurrences(raw.occurrences),
        )
    }
}

/// Raw features of `suggestion` against the GHB into which `trigger` has
/// been pushed. `window` is the transition look-ahead W: each occurrence of
/// the trigger block contributes `2^(W-m) / (k * 2^W)` for every entry at
/// offset `m` in `1..=W` after it holding the suggested block, where `k`
/// is the number of prior occurrences.
pub fn extract_raw(ghb: &Ghb, suggestion: &PrefetchSuggestion, trigger: Miss, window: u32) -> RawFeatures {
    let target = suggestion.block;
    let blocks: Vec<BlockAddr> = ghb.blocks_newest_first().collect();
    let distance = blocks.iter().position(|&b| b == target).unwrap_or(ghb.capacity());
    let occurrences = blocks.iter().filter(|&&b| b == target).count();

    let mut k = 0u64;
    let mut num = 0u64;
    // Distance 0 is the trigger itself.
    for (dist, _) in blocks.iter().enumerate().skip(1).filter(|(_, &b)| b == trigger.block) {
        k += 1;
        for m in 1..=(window as usize).min(dist) {
            if blocks[dist - m] == target {
                num += 1u64 << (window as usize - m);
            }
        }
    }
    let (transition_num, transition_den) = if k == 0 { (0, 1) } else { (num, k << window) };
    RawFeatures {
        distance,
        transition_num,
        transition_den,
        pc_xor_block: (target.0 ^ (trigger.pc >> 2)) as u16,
        occurrences,
    }
}

pub fn extract_features(
    ghb: &Ghb,
    suggestion: &PrefetchSuggestion,
    trigger: Miss,
    window: u32,
    quantizer: &Quantizer,
) -> FeatureVector {
    quantizer.quantize(&extract_raw(ghb, suggestion, trigger, window), ghb.capacity())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accept,
    Deny,
}

impl Verdict {
    pub fn sign(self) -> i32 {
        match self {
            Verdict::Accept => 1,
            Verdict::Deny => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub verdict: Verdict,
    pub y_out: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptronConfig {
    pub alpha: i32,
    pub initial_weights: [i8; NUM_FEATURES],
    pub transition_window: u32,
}

impl Default for PerceptronConfig {
    fn default() -> Self {
        Self { alpha: 1, initial_weights: [0; NUM_FEATURES], transition_window: 8 }
    }
}

impl PerceptronConfig {
    pub fn validate(&self) -> Result<(), PerceptronConfigError> {
        if self.alpha <= 0 {
            return Err(PerceptronConfigError::Alpha);
        }
        if !(1..=32).contains(&self.transition_window) {
            return Err(PerceptronConfigError::Window);
        }
        Ok(())
    }
}

/// Five saturating 8-bit weights shared by every suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Perceptron {
    pub weights: [i8; NUM_FEATURES],
    pub alpha: i32,
}

impl Perceptron {
    pub fn new(cfg: &PerceptronConfig) -> Self {
        Self { weights: cfg.initial_weights, alpha: cfg.alpha }
    }

    pub fn output(&self, x: &FeatureVector) -> i32 {
        self.weights.iter().zip(x.0.iter()).map(|(&w, &x)| w as i32 * x as i32).sum()
    }

    /// Accepts only when the output is strictly positive.
    pub fn decide(&self, x: &FeatureVector) -> Decision {
        let y_out = self.output(x);
        let verdict = if y_out > 0 { Verdict::Accept } else { Verdict::Deny };
        Decision { verdict, y_out }
    }

    /// `w_j += alpha * (d - r) * x_j`, saturating to the i8 range.
    pub fn train(&mut self, x: &FeatureVector, decision: Verdict, desired: Verdict) {
        let err = desired.sign() - decision.sign();
        if err == 0 {
            return;
        }
        for (w, &xj) in self.weights.iter_mut().zip(x.0.iter()) {
            let next = *w as i32 + self.alpha * err * xj as i32;
            *w = next.clamp(i8::MIN as i32, i8::MAX as i32) as i8;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableEntry {
    pub block: BlockAddr,
    pub features: FeatureVector,
    pub duration: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionKind {
    CorrectAccept,
    WrongAcceptTimeout,
    WrongAcceptEvicted,
    WrongAcceptFlush,
    CorrectDenyTimeout,
    CorrectDenyEvicted,
    CorrectDenyFlush,
    WrongDeny,
}

impl ResolutionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResolutionKind::CorrectAccept => "correct-accept",
            ResolutionKind::WrongAcceptTimeout => "wrong-accept-timeout",
            ResolutionKind::WrongAcceptEvicted => "wrong-accept-evicted",
            ResolutionKind::WrongAcceptFlush => "wrong-accept-flush",
            ResolutionKind::CorrectDenyTimeout => "correct-deny-timeout",
            ResolutionKind::CorrectDenyEvicted => "correct-deny-evicted",
            ResolutionKind::CorrectDenyFlush => "correct-deny-flush",
            ResolutionKind::WrongDeny => "wrong-deny",
        }
    }

    /// The decision that was made.
    pub fn decision(self) -> Verdict {
        match self {
            ResolutionKind::CorrectAccept
            | ResolutionKind::WrongAcceptTimeout
            | ResolutionKind::WrongAcceptEvicted
            | ResolutionKind::WrongAcceptFlush => Verdict::Accept,
            _ => Verdict::Deny,
        }
    }

    /// The decision that should have been made.
    pub fn desired(self) -> Verdict {
        match self {
            ResolutionKind::CorrectAccept | ResolutionKind::WrongDeny => Verdict::Accept,
            _ => Verdict::Deny,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub block: BlockAddr,
    pub features: FeatureVector,
    pub kind: ResolutionKind,
}

impl Resolution {
    pub fn needs_training(&self) -> bool {
        self.kind.decision() != self.kind.desired()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableEvent {
    /// Demand lookup at the prefetching level.
    DemandAccess(BlockAddr),
    /// Demand miss at the prefetching level (a prefetch trigger).
    CacheMiss(BlockAddr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    pub accept_capacity: usize,
    pub deny_capacity: usize,
    /// Demand accesses after which an untouched accept is wrong.
    pub accept_window: u16,
    /// Misses after which an untouched deny is correct.
    pub deny_window: u16,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self { accept_capacity: 256, deny_capacity: 32, accept_window: 256, deny_window: 32 }
    }
}

/// Both decision tables. Durations are 8-bit, so windows are at most 256.
#[derive(Debug, Clone)]
pub struct DecisionTables {
    cfg: TableConfig,
    accept: VecDeque<TableEntry>,
    deny: VecDeque<TableEntry>,
}

impl DecisionTables {
    pub fn new(cfg: TableConfig) -> Self {
        Self {
            accept: VecDeque::with_capacity(cfg.accept_capacity),
            deny: VecDeque::with_capacity(cfg.deny_capacity),
            cfg,
        }
    }

    pub fn accept_entries(&self) -> &VecDeque<TableEntry> {
        &self.accept
    }

    pub fn deny_entries(&self) -> &VecDeque<TableEntry> {
        &self.deny
    }

    pub fn pending(&self) -> usize {
        self.accept.len() + self.deny.len()
    }

    /// Inserts a decision; a full table first resolves its oldest entry.
    pub fn record_decision(
        &mut self,
        block: BlockAddr,
        features: FeatureVector,
        verdict: Verdict,
    ) -> Option<Resolution> {
        let (table, cap, kind) = match verdict {
            Verdict::Accept => (&mut self.accept, self.cfg.accept_capacity, ResolutionKind::WrongAcceptEvicted),
            Verdict::Deny => (&mut self.deny, self.cfg.deny_capacity, ResolutionKind::CorrectDenyEvicted),
        };
        let evicted = if table.len() >= cap {
            table.pop_front().map(|e| Resolution { block: e.block, features: e.features, kind })
        } else {
            None
        };
        table.push_back(TableEntry { block, features, duration: 0 });
        evicted
    }

    pub fn tick(&mut self, event: TableEvent) -> Vec<Resolution> {
        let (table, block, window, hit_kind, timeout_kind) = match event {
            TableEvent::DemandAccess(b) => (
                &mut self.accept,
                b,
                self.cfg.accept_window,
                ResolutionKind::CorrectAccept,
                ResolutionKind::WrongAcceptTimeout,
            ),
            TableEvent::CacheMiss(b) => (
                &mut self.deny,
                b,
                self.cfg.deny_window,
                ResolutionKind::WrongDeny,
                ResolutionKind::CorrectDenyTimeout,
            ),
        };
        let mut resolved = Vec::new();
        table.retain_mut(|e| {
            let kind = if e.block == block {
                hit_kind
            } else {
                let next = e.duration as u16 + 1;
                if next < window {
                    e.duration = next as u8;
                    return true;
                }
                timeout_kind
            };
            resolved.push(Resolution { block: e.block, features: e.features, kind });
            false
        });
        resolved
    }

    /// End of trace: outstanding accepts are wrong, outstanding denies correct.
    pub fn flush(&mut self) -> Vec<Resolution> {
        let accepts = self.accept.drain(..).map(|e| Resolution {
            block: e.block,
            features: e.features,
            kind: ResolutionKind::WrongAcceptFlush,
        });
        let denies = self.deny.drain(..).map(|e| Resolution {
            block: e.block,
            features: e.features,
            kind: ResolutionKind::CorrectDenyFlush,
        });
        accepts.chain(denies).collect()
    }
}
